//! Static memory planning for a chain of layers.
//!
//! Every intermediate tensor gets a byte range inside one arena. A tensor is
//! live from the step that produces it through the last step that reads it
//! (inclusive), so a layer's input and output are live together. Offsets are
//! assigned greedily in production order: each tensor takes the lowest
//! offset that does not collide with any placed tensor whose lifetime
//! overlaps its own.

use crate::error::{Error, Result};
use crate::netgraph::Op;
use crate::quantizer::QuantizedModel;

/// A tensor's lifetime, in execution steps, and its size in bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorLife {
    /// Reported in budget errors, e.g. `layer 2 (conv2d)`.
    pub name: String,
    pub size: usize,
    pub first: usize,
    pub last: usize,
}

impl TensorLife {
    pub fn new(name: impl Into<String>, size: usize, first: usize, last: usize) -> Self {
        TensorLife {
            name: name.into(),
            size,
            first,
            last,
        }
    }

    fn overlaps(&self, other: &TensorLife) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    pub tensor: TensorLife,
    pub offset: usize,
}

impl Placement {
    pub fn end(&self) -> usize {
        self.offset + self.tensor.size
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.end()
    }
}

/// Which arena tensors one layer reads and writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct StepIo {
    pub input: usize,
    pub output: usize,
    /// Fire modules' squeeze output.
    pub scratch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arena {
    pub capacity: usize,
    pub placements: Vec<Placement>,
    pub peak: usize,
    pub(crate) steps: Vec<StepIo>,
}

impl Arena {
    /// True when no two tensors with overlapping lifetimes share bytes and
    /// everything fits.
    pub fn is_consistent(&self) -> bool {
        let fits = self.placements.iter().all(|p| p.end() <= self.peak) && self.peak <= self.capacity;
        let disjoint = self.placements.iter().enumerate().all(|(i, a)| {
            self.placements[i + 1..].iter().all(|b| {
                !a.tensor.overlaps(&b.tensor) || a.end() <= b.offset || b.end() <= a.offset
            })
        });
        fits && disjoint
    }

    /// Sum of all tensor sizes, i.e. the footprint without reuse.
    pub fn unshared_bytes(&self) -> usize {
        self.placements.iter().map(|p| p.tensor.size).sum()
    }
}

/// Greedy first-fit placement of `tensors` (in production order).
pub fn plan_tensors(tensors: Vec<TensorLife>, capacity: usize) -> Result<Arena> {
    if capacity == 0 {
        return Err(Error::Config("arena capacity must be positive".into()));
    }
    let mut placements: Vec<Placement> = Vec::with_capacity(tensors.len());
    for t in tensors {
        let mut busy: Vec<(usize, usize)> = placements
            .iter()
            .filter(|p| p.tensor.overlaps(&t))
            .map(|p| (p.offset, p.end()))
            .collect();
        busy.sort_unstable();
        let mut offset = 0;
        for (start, end) in busy {
            if offset + t.size <= start {
                break;
            }
            offset = offset.max(end);
        }
        placements.push(Placement { tensor: t, offset });
    }
    let peak = placements.iter().map(Placement::end).max().unwrap_or(0);
    if peak > capacity {
        let culprit = placements
            .iter()
            .find(|p| p.end() > capacity)
            .expect("some placement ends at the peak");
        return Err(Error::BudgetExceeded {
            layer: culprit.tensor.name.clone(),
            required: peak,
            capacity,
        });
    }
    Ok(Arena {
        capacity,
        placements,
        peak,
        steps: Vec::new(),
    })
}

/// Plans the int8 activations of one inference. Flatten and dropout reuse
/// their input tensor; the head output stays live for the final dequantize.
pub fn plan_arena(qm: &QuantizedModel, capacity: usize) -> Result<Arena> {
    let net = qm.network();
    let nodes = net.nodes();
    let kinds: Vec<&str> = qm.config().layers.iter().map(|l| l.kind()).collect();
    let mut tensors = vec![TensorLife::new("input", net.input_shape().item_len(), 0, 0)];
    let mut steps = Vec::with_capacity(nodes.len());
    let mut cur = 0usize;
    for (i, node) in nodes.iter().enumerate() {
        tensors[cur].last = i;
        let name = format!("layer {i} ({})", kinds[i]);
        match node.op {
            Op::Flatten | Op::Dropout(_) => {
                steps.push(StepIo {
                    input: cur,
                    output: cur,
                    scratch: None,
                });
                continue;
            }
            _ => {}
        }
        let scratch = match &node.op {
            Op::Fire(f) => {
                tensors.push(TensorLife::new(format!("{name} squeeze"), f.squeeze.out_shape().len(), i, i));
                Some(tensors.len() - 1)
            }
            _ => None,
        };
        tensors.push(TensorLife::new(name, node.out_shape.item_len(), i, i));
        let output = tensors.len() - 1;
        steps.push(StepIo {
            input: cur,
            output,
            scratch,
        });
        cur = output;
    }
    tensors[cur].last = nodes.len();
    let mut arena = plan_tensors(tensors, capacity)?;
    arena.steps = steps;
    Ok(arena)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_layer_hand_trace() {
        // input (10 KB) feeds layer 0, whose 6 KB output is read at step 1
        let kb = 1024;
        let arena = plan_tensors(
            vec![TensorLife::new("a", 10 * kb, 0, 0), TensorLife::new("b", 6 * kb, 0, 1)],
            496 * kb,
        )
        .unwrap();
        assert_eq!(arena.peak, 16 * kb);
        assert!(arena.is_consistent());
    }

    #[test]
    fn dead_tensors_are_reused() {
        let arena = plan_tensors(
            vec![
                TensorLife::new("a", 100, 0, 0),
                TensorLife::new("b", 40, 0, 1),
                TensorLife::new("c", 60, 1, 2),
                TensorLife::new("d", 10, 2, 3),
            ],
            1000,
        )
        .unwrap();
        // c fits where a was; d goes after c since b has died by step 2
        assert_eq!(arena.placements.iter().map(|p| p.offset).collect::<Vec<_>>(), vec![0, 100, 0, 60]);
        assert_eq!(arena.peak, 140);
        assert!(arena.is_consistent());
        assert!(arena.unshared_bytes() > arena.peak);
    }

    #[test]
    fn budget_error_names_the_tensor() {
        let err = plan_tensors(vec![TensorLife::new("layer 0 (conv2d)", 5, 0, 0)], 1).unwrap_err();
        match err {
            Error::BudgetExceeded { layer, required, capacity } => {
                assert_eq!(layer, "layer 0 (conv2d)");
                assert_eq!((required, capacity), (5, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(plan_tensors(vec![], 0).is_err());
    }
}
