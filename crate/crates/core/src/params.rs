//! Named parameter collections and the checkpoint file format.
//!
//! A checkpoint is a text manifest followed by raw little-endian `f64` data:
//!
//! ```text
//! IRB-CHECKPOINT v1
//! params 3
//! stem.weight 16x3x3x3
//! stem.bias 16
//! ...
//! end
//! <binary payload: every tensor's values, in manifest order>
//! ```
//!
//! Each manifest line is `<name> <dims joined by 'x'>` and ends with `\n`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "IRB-CHECKPOINT v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.names.iter().any(|n| n.starts_with(prefix))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "params {}", self.len())?;
        for (name, t) in self.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(w, "{name} {}", dims.join("x"))?;
        }
        writeln!(w, "end")?;
        for t in &self.tensors {
            for v in t.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |r: &mut R| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("unexpected end of manifest".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut r)? != MAGIC {
            return Err(Error::Checkpoint("missing checkpoint magic line".into()));
        }
        let count_line = next_line(&mut r)?;
        let count: usize = count_line
            .strip_prefix("params ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("bad count line {count_line:?}")))?;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next_line(&mut r)?;
            let (name, dims) = l
                .rsplit_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("bad manifest line {l:?}")))?;
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Checkpoint(format!("bad shape in {l:?}")))?;
            manifest.push((name.to_string(), shape));
        }
        if next_line(&mut r)? != "end" {
            return Err(Error::Checkpoint("manifest not terminated by 'end'".into()));
        }
        let mut set = ParamSet::new();
        let mut buf = [0u8; 8];
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint(format!("truncated payload in {name}")))?;
                values.push(f64::from_le_bytes(buf));
            }
            set.push(name, Tensor::new(&shape, values)?);
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(set)
    }

    /// Copies every parameter into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Bound {
        let ids = self
            .tensors
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.requires_grad = requires_grad;
                t.grad = None;
                g.leaf(t)
            })
            .collect();
        Bound {
            names: self.names.clone(),
            ids,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Graph handles of a bound [`ParamSet`], in the same order.
#[derive(Debug, Clone)]
pub struct Bound {
    names: Vec<String>,
    ids: Vec<NodeId>,
}

impl Bound {
    /// Pairs parameter names with existing graph nodes, e.g. leaves created
    /// by hand for gradient checking.
    pub fn from_parts(names: Vec<String>, ids: Vec<NodeId>) -> Self {
        assert_eq!(names.len(), ids.len(), "one node per parameter");
        Self { names, ids }
    }

    /// Node of the named parameter. Panics on unknown names: parameter
    /// layouts are fixed by the model constructor.
    pub fn get(&self, name: &str) -> NodeId {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"));
        self.ids[i]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Accumulated gradients in parameter order; zeros where backward did
    /// not reach.
    pub fn grads(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.ids
            .iter()
            .map(|&id| {
                g.grad(id)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(id).len()])
            })
            .collect()
    }
}
