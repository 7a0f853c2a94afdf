use std::collections::BTreeMap;

use thiserror::Error;

use super::{Rgb, Scene, WallSegment};
use crate::geometry::{Transform2, Vec2};
use crate::sensors::SensorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    None,
    Region { name: String },
    /// A logical object: every wall segment sharing one semantic id, in the
    /// node's local frame.
    Object { semantic_id: u32, segments: Vec<WallSegment> },
    Agent,
    Sensor { kind: SensorKind },
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node {0:?} does not exist")]
    UnknownNode(NodeId),
    #[error("the root node cannot be detached or re-parented")]
    Root,
    #[error("node {0:?} is already attached")]
    AlreadyAttached(NodeId),
    #[error("node {0:?} is not attached")]
    NotAttached(NodeId),
    #[error("attaching {child:?} under {parent:?} would create a cycle")]
    Cycle { child: NodeId, parent: NodeId },
}

#[derive(Debug, Clone)]
struct Node {
    local: Transform2,
    payload: Payload,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
}

/// Tree of transform nodes. Nodes live in an arena; detached subtrees stay in
/// the arena and can be attached again.
#[derive(Debug, Clone)]
pub struct SceneGraph {
    scene_id: String,
    wall_height: f64,
    floor_color: Rgb,
    ceiling_color: Rgb,
    nodes: Vec<Node>,
}

impl SceneGraph {
    pub fn new(scene_id: impl Into<String>, wall_height: f64, floor_color: Rgb, ceiling_color: Rgb) -> Self {
        SceneGraph {
            scene_id: scene_id.into(),
            wall_height,
            floor_color,
            ceiling_color,
            nodes: vec![Node {
                local: Transform2::IDENTITY,
                payload: Payload::None,
                parent: None,
                children: Vec::new(),
            }],
        }
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn wall_height(&self) -> f64 {
        self.wall_height
    }

    pub fn floor_color(&self) -> Rgb {
        self.floor_color
    }

    pub fn ceiling_color(&self) -> Rgb {
        self.ceiling_color
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    fn node(&self, id: NodeId) -> Result<&Node, GraphError> {
        self.nodes.get(id.0).ok_or(GraphError::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut Node, GraphError> {
        self.nodes.get_mut(id.0).ok_or(GraphError::UnknownNode(id))
    }

    pub fn add_child(&mut self, parent: NodeId, local: Transform2, payload: Payload) -> Result<NodeId, GraphError> {
        self.node(parent)?;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            local,
            payload,
            parent: Some(parent),
            children: Vec::new(),
        });
        self.nodes[parent.0].children.push(id);
        Ok(id)
    }

    pub fn payload(&self, id: NodeId) -> Result<&Payload, GraphError> {
        Ok(&self.node(id)?.payload)
    }

    pub fn children(&self, id: NodeId) -> Result<&[NodeId], GraphError> {
        Ok(&self.node(id)?.children)
    }

    pub fn parent(&self, id: NodeId) -> Result<Option<NodeId>, GraphError> {
        Ok(self.node(id)?.parent)
    }

    pub fn local_transform(&self, id: NodeId) -> Result<Transform2, GraphError> {
        Ok(self.node(id)?.local)
    }

    pub fn set_local_transform(&mut self, id: NodeId, t: Transform2) -> Result<(), GraphError> {
        self.node_mut(id)?.local = t;
        Ok(())
    }

    /// Adds `delta` to the node's local translation.
    pub fn translate(&mut self, id: NodeId, delta: Vec2) -> Result<(), GraphError> {
        let n = self.node_mut(id)?;
        n.local.translation += delta;
        Ok(())
    }

    /// Composition of all ancestor transforms, root first.
    pub fn world_transform(&self, id: NodeId) -> Result<Transform2, GraphError> {
        let mut chain = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let n = self.node(c)?;
            chain.push(n.local);
            cur = n.parent;
        }
        Ok(chain.iter().rev().fold(Transform2::IDENTITY, |acc, t| acc.compose(t)))
    }

    /// True when `ancestor` is `id` or lies on the path from `id` to its root.
    fn is_ancestor(&self, ancestor: NodeId, id: NodeId) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.nodes[c.0].parent;
        }
        false
    }

    /// Unlinks a subtree from its parent, returning the parent and the child
    /// position it occupied.
    pub fn detach(&mut self, id: NodeId) -> Result<(NodeId, usize), GraphError> {
        if id == self.root() {
            return Err(GraphError::Root);
        }
        let parent = self.node(id)?.parent.ok_or(GraphError::NotAttached(id))?;
        let siblings = &mut self.nodes[parent.0].children;
        let pos = siblings.iter().position(|&c| c == id).expect("child listed under its parent");
        siblings.remove(pos);
        self.nodes[id.0].parent = None;
        Ok((parent, pos))
    }

    /// Attaches a detached subtree under `parent` at child position `position`
    /// (clamped to the end).
    pub fn attach(&mut self, id: NodeId, parent: NodeId, position: usize) -> Result<(), GraphError> {
        if id == self.root() {
            return Err(GraphError::Root);
        }
        self.node(parent)?;
        if self.node(id)?.parent.is_some() {
            return Err(GraphError::AlreadyAttached(id));
        }
        if self.is_ancestor(id, parent) {
            return Err(GraphError::Cycle { child: id, parent });
        }
        let siblings = &mut self.nodes[parent.0].children;
        let pos = position.min(siblings.len());
        siblings.insert(pos, id);
        self.nodes[id.0].parent = Some(parent);
        Ok(())
    }

    /// Object nodes reachable from the root, depth-first.
    pub fn objects(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.visit(self.root(), &mut |id, n| {
            if matches!(n.payload, Payload::Object { .. }) {
                out.push(id);
            }
        });
        out
    }

    pub fn find_object(&self, semantic_id: u32) -> Option<NodeId> {
        self.objects().into_iter().find(|&id| {
            matches!(&self.nodes[id.0].payload, Payload::Object { semantic_id: s, .. } if *s == semantic_id)
        })
    }

    pub fn find_first(&self, pred: impl Fn(&Payload) -> bool) -> Option<NodeId> {
        let mut found = None;
        self.visit(self.root(), &mut |id, n| {
            if found.is_none() && pred(&n.payload) {
                found = Some(id);
            }
        });
        found
    }

    fn visit(&self, id: NodeId, f: &mut impl FnMut(NodeId, &Node)) {
        let n = &self.nodes[id.0];
        f(id, n);
        for &c in &n.children {
            self.visit(c, f);
        }
    }

    /// World-space wall segments of every attached object node, depth-first in
    /// child order.
    pub fn flatten_for_render(&self) -> Vec<WallSegment> {
        let mut out = Vec::new();
        self.flatten_into(self.root(), Transform2::IDENTITY, &mut out);
        out
    }

    fn flatten_into(&self, id: NodeId, parent_world: Transform2, out: &mut Vec<WallSegment>) {
        let n = &self.nodes[id.0];
        let world = parent_world.compose(&n.local);
        if let Payload::Object { segments, .. } = &n.payload {
            if world.is_identity() {
                out.extend_from_slice(segments);
            } else {
                out.extend(segments.iter().map(|s| WallSegment {
                    a: world.apply(s.a),
                    b: world.apply(s.b),
                    ..*s
                }));
            }
        }
        for &c in &n.children {
            self.flatten_into(c, world, out);
        }
    }
}

/// Root → one region → one object node per semantic id (in order of first
/// appearance).
pub fn build_scene_graph(scene: &Scene) -> SceneGraph {
    let mut graph = SceneGraph::new(&scene.id, scene.wall_height, scene.floor_color, scene.ceiling_color);
    let region = graph
        .add_child(
            graph.root(),
            Transform2::IDENTITY,
            Payload::Region {
                name: format!("{}/main", scene.id),
            },
        )
        .expect("root exists");

    let mut order: Vec<u32> = Vec::new();
    let mut groups: BTreeMap<u32, Vec<WallSegment>> = BTreeMap::new();
    for w in &scene.walls {
        groups
            .entry(w.semantic_id)
            .or_insert_with(|| {
                order.push(w.semantic_id);
                Vec::new()
            })
            .push(*w);
    }
    for id in order {
        let segments = groups.remove(&id).unwrap_or_default();
        graph
            .add_child(region, Transform2::IDENTITY, Payload::Object { semantic_id: id, segments })
            .expect("region exists");
    }
    graph
}
