use std::collections::BTreeMap;

use serde::Serialize;

use crate::exec::TestOutcome;
use crate::intercept::CapturedChange;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    NotVisited,
    Visited,
    TestFinished,
}

pub type NodeId = usize;

#[derive(Clone, Debug)]
pub struct SttNode {
    pub status: NodeStatus,
    pub patches: Vec<String>,
    pub edges: BTreeMap<CapturedChange, NodeId>,
    pub outcome: Option<TestOutcome>,
    pub parent: Option<NodeId>,
    /// Site where the node was expanded, and a digest of the data state there.
    pub site: Option<String>,
    pub digest: Option<u64>,
    /// Patches whose capture timed out at this node.
    pub timed_out: Vec<String>,
    /// Steps charged when an edge is replayed (its first member's capture cost).
    pub edge_steps: BTreeMap<CapturedChange, u64>,
    /// Not-visited nodes in this subtree, including the node itself.
    open: u32,
}

impl SttNode {
    fn new(patches: Vec<String>, parent: Option<NodeId>) -> SttNode {
        SttNode {
            status: NodeStatus::NotVisited,
            patches,
            edges: BTreeMap::new(),
            outcome: None,
            parent,
            site: None,
            digest: None,
            timed_out: Vec::new(),
            edge_steps: BTreeMap::new(),
            open: 1,
        }
    }
}

/// State-transition tree for one (patch set, test) pair.
#[derive(Clone, Debug)]
pub struct Tree {
    pub nodes: Vec<SttNode>,
}

impl Tree {
    pub fn new(patches: Vec<String>) -> Tree {
        Tree { nodes: vec![SttNode::new(patches, None)] }
    }

    pub const ROOT: NodeId = 0;

    pub fn has_not_visited(&self, id: NodeId) -> bool {
        self.nodes[id].open > 0
    }

    fn adjust_open(&mut self, mut id: NodeId, delta: i32) {
        loop {
            let n = &mut self.nodes[id];
            n.open = (n.open as i32 + delta) as u32;
            match n.parent {
                Some(p) => id = p,
                None => break,
            }
        }
    }

    /// Child reached through `change`, created on first use.
    pub fn child_for(&mut self, id: NodeId, change: &CapturedChange, steps: u64) -> NodeId {
        if let Some(&c) = self.nodes[id].edges.get(change) {
            return c;
        }
        let c = self.nodes.len();
        self.nodes.push(SttNode::new(Vec::new(), Some(id)));
        self.nodes[id].edges.insert(change.clone(), c);
        self.nodes[id].edge_steps.insert(change.clone(), steps);
        self.adjust_open(id, 1);
        c
    }

    pub fn mark_visited(&mut self, id: NodeId, site: &str, digest: u64) {
        debug_assert_eq!(self.nodes[id].status, NodeStatus::NotVisited);
        let n = &mut self.nodes[id];
        n.status = NodeStatus::Visited;
        n.site = Some(site.to_string());
        n.digest = Some(digest);
        self.adjust_open(id, -1);
    }

    pub fn finish(&mut self, id: NodeId, outcome: Option<TestOutcome>) {
        let was_open = self.nodes[id].status == NodeStatus::NotVisited;
        let n = &mut self.nodes[id];
        n.status = NodeStatus::TestFinished;
        n.outcome = outcome;
        if was_open {
            self.adjust_open(id, -1);
        }
    }

    /// Smallest-change edge whose subtree still holds a not-visited node.
    pub fn pick_child(&self, id: NodeId) -> Option<(&CapturedChange, NodeId)> {
        self.nodes[id].edges.iter().find(|(_, &c)| self.has_not_visited(c)).map(|(k, &c)| (k, c))
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.status == NodeStatus::TestFinished).count()
    }

    /// Nodes whose children split the patch set, in creation order.
    pub fn branch_points(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].edges.len() > 1).collect()
    }

    /// Patch sets of the children of `id`, in edge order.
    pub fn partition_at(&self, id: NodeId) -> Vec<Vec<String>> {
        self.nodes[id].edges.values().map(|&c| self.nodes[c].patches.clone()).collect()
    }

    pub fn dump(&self) -> TreeDump {
        TreeDump {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeDump {
                    id,
                    status: n.status,
                    site: n.site.clone(),
                    patches: n.patches.clone(),
                    edges: n.edges.iter().map(|(k, &c)| EdgeDump { change: k.to_string(), child: c }).collect(),
                    timed_out: n.timed_out.clone(),
                    outcome: n.outcome.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TreeDump {
    pub nodes: Vec<NodeDump>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeDump {
    pub id: NodeId,
    pub status: NodeStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
    pub patches: Vec<String>,
    pub edges: Vec<EdgeDump>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub timed_out: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TestOutcome>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeDump {
    pub change: String,
    pub child: NodeId,
}
