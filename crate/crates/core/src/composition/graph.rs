use super::store::{BlockId, ParameterStore};
use crate::error::{Error, Result};
use crate::universe::{Observation, World};

/// Which part of the observation a node consumes next to its children's outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsSlice {
    Intrinsic,
    Extrinsic,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub block: BlockId,
    /// Indices of nodes whose outputs are concatenated, in order, into this
    /// node's input ahead of its observation slice.
    pub children: Vec<usize>,
    pub obs: ObsSlice,
}

/// Modules wired into a DAG whose single root emits the action. The
/// two-module policy is the chain `task → robot`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGraph {
    nodes: Vec<GraphNode>,
    root: usize,
    order: Vec<usize>,
}

impl PolicyGraph {
    pub fn new(nodes: Vec<GraphNode>) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::Config("policy graph has no nodes".into()));
        }
        let mut consumed = vec![false; n];
        for (i, node) in nodes.iter().enumerate() {
            for &c in &node.children {
                if c >= n {
                    return Err(Error::Config(format!("node {i} references missing node {c}")));
                }
                consumed[c] = true;
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| !consumed[i]).collect();
        if roots.len() != 1 {
            return Err(Error::Config(format!(
                "policy graph needs exactly one root, found {}",
                roots.len()
            )));
        }
        // Post-order DFS from the root; a grey node reached again is a cycle.
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        fn visit(i: usize, nodes: &[GraphNode], marks: &mut [Mark], order: &mut Vec<usize>) -> Result<()> {
            match marks[i] {
                Mark::Black => return Ok(()),
                Mark::Grey => return Err(Error::Config(format!("policy graph has a cycle through node {i}"))),
                Mark::White => {}
            }
            marks[i] = Mark::Grey;
            for &c in &nodes[i].children {
                visit(c, nodes, marks, order)?;
            }
            marks[i] = Mark::Black;
            order.push(i);
            Ok(())
        }
        let mut marks = vec![Mark::White; n];
        let mut order = Vec::with_capacity(n);
        visit(roots[0], &nodes, &mut marks, &mut order)?;
        if order.len() != n {
            // Unreached nodes all have parents, so they sit on a cycle.
            return Err(Error::Config("policy graph has a cycle unreachable from the root".into()));
        }
        Ok(Self {
            nodes,
            root: roots[0],
            order,
        })
    }

    /// `robot(task(o_T), o_R)` for `world`.
    pub fn chain(world: &World) -> Self {
        Self::new(vec![
            GraphNode {
                block: BlockId::Task(world.task.clone()),
                children: vec![],
                obs: ObsSlice::Extrinsic,
            },
            GraphNode {
                block: BlockId::Robot(world.robot.clone()),
                children: vec![0],
                obs: ObsSlice::Intrinsic,
            },
        ])
        .expect("two-node chain is a valid graph")
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Evaluates every node in dependency order with eval-mode modules.
    pub fn evaluate(&self, store: &ParameterStore, obs: &Observation) -> Result<Vec<f64>> {
        let mut outputs: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for &i in &self.order {
            let node = &self.nodes[i];
            let module = match &node.block {
                BlockId::Robot(id) => store.robot(id)?,
                BlockId::Task(id) => store.task(id)?,
                BlockId::LogStd(_) => {
                    return Err(Error::Config(format!("node {i} refers to a log-std block")))
                }
            };
            let mut input = Vec::with_capacity(module.in_dim());
            for &c in &node.children {
                input.extend(outputs[c].as_ref().expect("children evaluated first"));
            }
            match node.obs {
                ObsSlice::Intrinsic => input.extend(&obs.intrinsic),
                ObsSlice::Extrinsic => input.extend(&obs.extrinsic),
                ObsSlice::None => {}
            }
            outputs[i] = Some(module.forward(&input)?);
        }
        Ok(outputs[self.root].take().expect("root evaluated"))
    }
}
