//! Coordination graphs: agents, stateless function nodes, and one loss node,
//! compiled into a single flat loss expression.
//!
//! Agents own action vectors; function nodes are expression templates whose
//! inputs are wired to upstream nodes; the loss node is an expression over
//! node ids. `build` validates the whole declaration (unique ids and labels,
//! known endpoints, acyclicity, total wiring, everything feeding the loss),
//! then inlines every function template so the mechanism only ever
//! differentiates one expression whose variables are exactly the agent ids.
//!
//! Topological order is computed with a smallest-id-first ready queue, so
//! the same declaration always yields the same order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::expr::{Expr, ExprBuilder, ExprError, NodeRef};
use crate::scalar::Scalar;
use crate::vector::Vector;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate node id `{id}`")]
    DuplicateNodeId { id: String },
    #[error("duplicate node label `{label}`")]
    DuplicateLabel { label: String },
    #[error("unknown node `{id}` referenced by {context}")]
    UnknownNode { id: String, context: String },
    #[error("dependency cycle: {}", cycle.join(" -> "))]
    CycleDetected { cycle: Vec<String> },
    #[error("function `{function}` wiring does not match its template: {detail}")]
    TemplateInputMismatch { function: String, detail: String },
    #[error("invalid node `{id}`: {reason}")]
    InvalidNode { id: String, reason: String },
    #[error("node `{id}` has no path to the loss")]
    DisconnectedFromLoss { id: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Agent,
    Function,
    Loss,
}

enum DeclKind<S: Scalar> {
    Agent { initial: Vector<S> },
    Function {
        template: Expr<S>,
        wiring: Vec<(String, String)>,
    },
    Loss { expr: Expr<S> },
}

struct Decl<S: Scalar> {
    id: String,
    label: String,
    kind: DeclKind<S>,
}

/// Structural description of one agent after validation.
#[derive(Debug, Clone)]
pub struct AgentNode<S: Scalar> {
    pub id: String,
    pub label: String,
    pub initial: Vector<S>,
}

impl<S: Scalar> AgentNode<S> {
    pub fn dim(&self) -> usize {
        self.initial.dim()
    }
}

pub struct GraphBuilder<S: Scalar> {
    decls: Vec<Decl<S>>,
    edges: Vec<(String, String)>,
}

impl<S: Scalar> Default for GraphBuilder<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> GraphBuilder<S> {
    pub fn new() -> Self {
        GraphBuilder {
            decls: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// Declares an agent whose action vector starts at `initial`. The agent's
    /// id doubles as its variable name in loss and template wiring.
    pub fn agent(&mut self, id: &str, label: &str, initial: Vector<S>) -> &mut Self {
        self.decls.push(Decl {
            id: id.to_string(),
            label: label.to_string(),
            kind: DeclKind::Agent { initial },
        });
        self
    }

    /// Declares a stateless function node. `wiring` maps each template
    /// variable name to the id of the upstream node providing it.
    pub fn function(
        &mut self,
        id: &str,
        label: &str,
        template: Expr<S>,
        wiring: &[(&str, &str)],
    ) -> &mut Self {
        self.decls.push(Decl {
            id: id.to_string(),
            label: label.to_string(),
            kind: DeclKind::Function {
                template,
                wiring: wiring
                    .iter()
                    .map(|(v, s)| (v.to_string(), s.to_string()))
                    .collect(),
            },
        });
        self
    }

    /// Declares the loss node. `expr`'s variables are node ids.
    pub fn loss(&mut self, id: &str, label: &str, expr: Expr<S>) -> &mut Self {
        self.decls.push(Decl {
            id: id.to_string(),
            label: label.to_string(),
            kind: DeclKind::Loss { expr },
        });
        self
    }

    /// Declares a structural dependency `from -> to` on top of the edges
    /// implied by wiring and loss references.
    pub fn edge(&mut self, from: &str, to: &str) -> &mut Self {
        self.edges.push((from.to_string(), to.to_string()));
        self
    }

    pub fn build(self) -> Result<Graph<S>, GraphError> {
        // Identity checks first so every later error can trust id lookups.
        let mut ids = BTreeSet::new();
        let mut labels = BTreeSet::new();
        for d in &self.decls {
            if !ids.insert(d.id.clone()) {
                return Err(GraphError::DuplicateNodeId { id: d.id.clone() });
            }
            if !labels.insert(d.label.clone()) {
                return Err(GraphError::DuplicateLabel {
                    label: d.label.clone(),
                });
            }
        }

        let loss_ids: Vec<&str> = self
            .decls
            .iter()
            .filter(|d| matches!(d.kind, DeclKind::Loss { .. }))
            .map(|d| d.id.as_str())
            .collect();
        match loss_ids.len() {
            1 => {}
            0 => {
                return Err(GraphError::InvalidNode {
                    id: "(graph)".to_string(),
                    reason: "no loss node declared".to_string(),
                })
            }
            _ => {
                return Err(GraphError::InvalidNode {
                    id: loss_ids[1].to_string(),
                    reason: "a graph has exactly one loss node".to_string(),
                })
            }
        }
        let loss_id = loss_ids[0].to_string();

        for (from, to) in &self.edges {
            for (end, which) in [(from, "edge source"), (to, "edge target")] {
                if !ids.contains(end.as_str()) {
                    return Err(GraphError::UnknownNode {
                        id: end.clone(),
                        context: which.to_string(),
                    });
                }
            }
            if *from == loss_id {
                return Err(GraphError::InvalidNode {
                    id: loss_id.clone(),
                    reason: "the loss node is a sink and cannot feed other nodes".to_string(),
                });
            }
        }

        // Wiring and loss references imply data edges; collect them while
        // checking that every reference resolves and every template input is
        // wired exactly once.
        let mut implied: Vec<(String, String)> = Vec::new();
        for d in &self.decls {
            match &d.kind {
                DeclKind::Agent { .. } => {}
                DeclKind::Function { template, wiring } => {
                    let wanted: BTreeSet<&str> =
                        template.var_names().iter().map(|s| s.as_str()).collect();
                    let mut seen: BTreeSet<&str> = BTreeSet::new();
                    for (var, source) in wiring {
                        if !wanted.contains(var.as_str()) {
                            return Err(GraphError::TemplateInputMismatch {
                                function: d.id.clone(),
                                detail: format!("`{var}` is not a template variable"),
                            });
                        }
                        if !seen.insert(var.as_str()) {
                            return Err(GraphError::TemplateInputMismatch {
                                function: d.id.clone(),
                                detail: format!("`{var}` is wired twice"),
                            });
                        }
                        if !ids.contains(source.as_str()) {
                            return Err(GraphError::UnknownNode {
                                id: source.clone(),
                                context: format!("wiring of function `{}`", d.id),
                            });
                        }
                        if *source == loss_id {
                            return Err(GraphError::InvalidNode {
                                id: loss_id.clone(),
                                reason: "the loss node is a sink and cannot feed other nodes"
                                    .to_string(),
                            });
                        }
                        implied.push((source.clone(), d.id.clone()));
                    }
                    if let Some(missing) = wanted.iter().find(|v| !seen.contains(**v)) {
                        return Err(GraphError::TemplateInputMismatch {
                            function: d.id.clone(),
                            detail: format!("template variable `{missing}` is not wired"),
                        });
                    }
                }
                DeclKind::Loss { expr } => {
                    for var in expr.var_names() {
                        if !ids.contains(var.as_str()) || *var == loss_id {
                            return Err(GraphError::UnknownNode {
                                id: var.clone(),
                                context: "loss expression".to_string(),
                            });
                        }
                        implied.push((var.clone(), d.id.clone()));
                    }
                }
            }
        }

        // Deterministic topological order over declared + implied edges.
        let mut succ: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        let mut indeg: BTreeMap<&str, usize> = BTreeMap::new();
        for d in &self.decls {
            succ.entry(d.id.as_str()).or_default();
            indeg.entry(d.id.as_str()).or_insert(0);
        }
        for (from, to) in self.edges.iter().chain(implied.iter()) {
            if succ
                .get_mut(from.as_str())
                .expect("endpoints validated")
                .insert(to.as_str())
            {
                *indeg.get_mut(to.as_str()).expect("endpoints validated") += 1;
            }
        }
        let mut ready: BinaryHeap<Reverse<&str>> = indeg
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| Reverse(*id))
            .collect();
        let mut topo: Vec<String> = Vec::with_capacity(self.decls.len());
        while let Some(Reverse(id)) = ready.pop() {
            topo.push(id.to_string());
            for next in succ[id].iter().copied() {
                let d = indeg.get_mut(next).expect("endpoints validated");
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(next));
                }
            }
        }
        if topo.len() < self.decls.len() {
            let leftover: BTreeSet<&str> = indeg
                .iter()
                .filter(|(id, _)| !topo.iter().any(|t| t == **id))
                .map(|(id, _)| *id)
                .collect();
            return Err(GraphError::CycleDetected {
                cycle: extract_cycle(&leftover, &succ),
            });
        }

        // Everything must feed the loss through data edges; purely
        // structural reachability does not move the objective.
        let mut reached: BTreeSet<&str> = BTreeSet::new();
        reached.insert(loss_id.as_str());
        let mut frontier = vec![loss_id.as_str()];
        let mut pred: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (from, to) in &implied {
            pred.entry(to.as_str()).or_default().push(from.as_str());
        }
        while let Some(node) = frontier.pop() {
            if let Some(sources) = pred.get(node) {
                for s in sources {
                    if reached.insert(s) {
                        frontier.push(s);
                    }
                }
            }
        }
        for d in &self.decls {
            if !matches!(d.kind, DeclKind::Loss { .. }) && !reached.contains(d.id.as_str()) {
                return Err(GraphError::DisconnectedFromLoss { id: d.id.clone() });
            }
        }

        // Inline function templates in topological order, then the loss
        // expression itself, producing one flat expression over agent ids.
        let mut flat = ExprBuilder::new();
        let mut node_ref: BTreeMap<String, NodeRef> = BTreeMap::new();
        let decl_by_id: BTreeMap<&str, &Decl<S>> =
            self.decls.iter().map(|d| (d.id.as_str(), d)).collect();
        let mut loss_root = None;
        for id in &topo {
            let d = decl_by_id[id.as_str()];
            match &d.kind {
                DeclKind::Agent { .. } => {
                    node_ref.insert(id.clone(), flat.var(id));
                }
                DeclKind::Function { template, wiring } => {
                    let wire: BTreeMap<String, NodeRef> = wiring
                        .iter()
                        .map(|(var, source)| (var.clone(), node_ref[source]))
                        .collect();
                    let root = template.inline_into(&mut flat, &wire)?;
                    node_ref.insert(id.clone(), root);
                }
                DeclKind::Loss { expr } => {
                    let wire: BTreeMap<String, NodeRef> = expr
                        .var_names()
                        .iter()
                        .map(|var| (var.clone(), node_ref[var]))
                        .collect();
                    loss_root = Some(expr.inline_into(&mut flat, &wire)?);
                }
            }
        }
        let flat = flat.finish(loss_root.expect("loss presence checked"))?;

        let agents: Vec<AgentNode<S>> = self
            .decls
            .iter()
            .filter_map(|d| match &d.kind {
                DeclKind::Agent { initial } => Some(AgentNode {
                    id: d.id.clone(),
                    label: d.label.clone(),
                    initial: initial.clone(),
                }),
                _ => None,
            })
            .collect();

        // Hot-path mapping: flat expression slot -> agent index.
        let agent_index: BTreeMap<&str, usize> = agents
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.as_str(), i))
            .collect();
        let slot_agents: Vec<usize> = flat
            .var_names()
            .iter()
            .map(|name| agent_index[name.as_str()])
            .collect();

        let kinds: BTreeMap<String, NodeKind> = self
            .decls
            .iter()
            .map(|d| {
                let k = match d.kind {
                    DeclKind::Agent { .. } => NodeKind::Agent,
                    DeclKind::Function { .. } => NodeKind::Function,
                    DeclKind::Loss { .. } => NodeKind::Loss,
                };
                (d.id.clone(), k)
            })
            .collect();

        let mut edge_set: BTreeSet<(String, String)> = self.edges.into_iter().collect();
        edge_set.extend(implied);

        Ok(Graph {
            agents,
            slot_agents,
            kinds,
            topo,
            edges: edge_set.into_iter().collect(),
            loss: flat,
            loss_id,
        })
    }
}

/// Walks successor links inside the non-schedulable remainder until a node
/// repeats, then returns that loop (first node repeated at the end).
fn extract_cycle(leftover: &BTreeSet<&str>, succ: &BTreeMap<&str, BTreeSet<&str>>) -> Vec<String> {
    // The remainder also contains nodes merely downstream of a cycle; peel
    // those off until every survivor has a surviving successor.
    let mut core: BTreeSet<&str> = leftover.clone();
    loop {
        let dead: Vec<&str> = core
            .iter()
            .copied()
            .filter(|n| succ[*n].iter().all(|s| !core.contains(s)))
            .collect();
        if dead.is_empty() {
            break;
        }
        for n in dead {
            core.remove(n);
        }
    }
    let leftover = &core;
    let start = *leftover.iter().next().expect("cycle implies leftover nodes");
    let mut path: Vec<&str> = vec![start];
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    seen.insert(start, 0);
    loop {
        let here = *path.last().expect("path never empty");
        let next = succ[here]
            .iter()
            .copied()
            .find(|n| leftover.contains(*n))
            .expect("every leftover node keeps a leftover successor");
        if let Some(&at) = seen.get(next) {
            let mut cycle: Vec<String> = path[at..].iter().map(|s| s.to_string()).collect();
            cycle.push(next.to_string());
            return cycle;
        }
        seen.insert(next, path.len());
        path.push(next);
    }
}

/// Validated coordination graph with its compiled loss.
///
/// Debug output summarizes the shape; the compiled expression itself holds
/// closures and is not printable.
pub struct Graph<S: Scalar> {
    agents: Vec<AgentNode<S>>,
    slot_agents: Vec<usize>,
    kinds: BTreeMap<String, NodeKind>,
    topo: Vec<String>,
    edges: Vec<(String, String)>,
    loss: Expr<S>,
    loss_id: String,
}

impl<S: Scalar> std::fmt::Debug for Graph<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph")
            .field("agents", &self.agents.len())
            .field("nodes", &self.kinds.len())
            .field("edges", &self.edges.len())
            .finish()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn agents(&self) -> &[AgentNode<S>] {
        &self.agents
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// Compiled loss over agent-id variables.
    pub fn loss_expr(&self) -> &Expr<S> {
        &self.loss
    }

    pub fn loss_id(&self) -> &str {
        &self.loss_id
    }

    /// Node ids in dependency order (ties broken by smallest id).
    pub fn topo_order(&self) -> &[String] {
        &self.topo
    }

    pub fn kind(&self, id: &str) -> Option<NodeKind> {
        self.kinds.get(id).copied()
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    /// Declared plus implied edges, deduplicated, in sorted order.
    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    /// For each variable slot of the compiled loss, the index into
    /// `agents()` owning that action.
    pub fn slot_agents(&self) -> &[usize] {
        &self.slot_agents
    }

    /// Initial actions aligned with the compiled loss's variable slots.
    pub fn initial_slots(&self) -> Vec<Vector<S>> {
        self.slot_agents
            .iter()
            .map(|&i| self.agents[i].initial.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{forward_eval, Bindings};

    fn vec1(x: f64) -> Vector<f64> {
        Vector::new(&[x]).unwrap()
    }

    /// (a1 + a2 - y)^2 + lambda a1^2 as a two-agent graph with a structural
    /// upstream/downstream edge between the agents.
    fn toy_graph() -> Graph<f64> {
        let mut eb = ExprBuilder::new();
        let a1 = eb.var("a1");
        let a2 = eb.var("a2");
        let s1 = eb.sum(a1);
        let s2 = eb.sum(a2);
        let total = eb.add(&[s1, s2]);
        let target = eb.constant(10.0);
        let gap = eb.sub(total, target);
        let sq = eb.square(gap);
        let pen = eb.square(s1);
        let pen = eb.scale(0.5, pen);
        let root = eb.add(&[sq, pen]);
        let loss = eb.finish(root).unwrap();

        let mut gb = GraphBuilder::new();
        gb.agent("a1", "supplier", vec1(1.0))
            .agent("a2", "assembler", vec1(1.0))
            .loss("loss", "system loss", loss)
            .edge("a1", "a2");
        gb.build().unwrap()
    }

    #[test]
    fn toy_graph_compiles_and_orders() {
        let g = toy_graph();
        assert_eq!(g.agent_count(), 2);
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.topo_order(), &["a1", "a2", "loss"]);
        assert_eq!(g.loss_expr().var_names(), &["a1", "a2"]);
        assert_eq!(g.slot_agents(), &[0, 1]);
        let bindings: Bindings<f64> = [
            ("a1".to_string(), vec1(1.0)),
            ("a2".to_string(), vec1(1.0)),
        ]
        .into();
        assert_eq!(forward_eval(g.loss_expr(), &bindings).unwrap(), 64.5);
    }

    #[test]
    fn function_nodes_inline_into_the_loss() {
        // f = (sum(u))^2 wired to a1; loss = f + (sum(a2) - 3)^2
        let mut tb = ExprBuilder::new();
        let u = tb.var("u");
        let su = tb.sum(u);
        let sq = tb.square(su);
        let template = tb.finish(sq).unwrap();

        let mut lb = ExprBuilder::new();
        let f = lb.var("f");
        let a2 = lb.var("a2");
        let s2 = lb.sum(a2);
        let c = lb.constant(3.0);
        let gap = lb.sub(s2, c);
        let g2 = lb.square(gap);
        let sf = lb.sum(f);
        let root = lb.add(&[sf, g2]);
        let loss = lb.finish(root).unwrap();

        let mut gb = GraphBuilder::new();
        gb.agent("a1", "one", vec1(2.0))
            .agent("a2", "two", vec1(0.0))
            .function("f", "throughput", template, &[("u", "a1")])
            .loss("loss", "system loss", loss);
        let g = gb.build().unwrap();
        assert_eq!(g.topo_order(), &["a1", "a2", "f", "loss"]);
        assert_eq!(g.kind("f"), Some(NodeKind::Function));
        // vars of the flat loss are agent ids only
        assert_eq!(g.loss_expr().var_names(), &["a1", "a2"]);
        let bindings: Bindings<f64> = [
            ("a1".to_string(), vec1(2.0)),
            ("a2".to_string(), vec1(1.0)),
        ]
        .into();
        assert_eq!(forward_eval(g.loss_expr(), &bindings).unwrap(), 8.0);
    }

    #[test]
    fn duplicate_ids_and_labels_are_rejected() {
        let mut gb = GraphBuilder::<f64>::new();
        gb.agent("a", "one", vec1(0.0)).agent("a", "two", vec1(0.0));
        assert_eq!(
            gb.build().unwrap_err(),
            GraphError::DuplicateNodeId { id: "a".into() }
        );

        let mut gb = GraphBuilder::<f64>::new();
        gb.agent("a", "same", vec1(0.0)).agent("b", "same", vec1(0.0));
        assert_eq!(
            gb.build().unwrap_err(),
            GraphError::DuplicateLabel {
                label: "same".into()
            }
        );
    }

    #[test]
    fn unknown_edge_endpoint_is_rejected() {
        let mut eb = ExprBuilder::new();
        let a = eb.var("a");
        let s = eb.sum(a);
        let sq = eb.square(s);
        let loss = eb.finish(sq).unwrap();
        let mut gb = GraphBuilder::new();
        gb.agent("a", "a", vec1(0.0))
            .loss("loss", "loss", loss)
            .edge("a", "ghost");
        assert_eq!(
            gb.build().unwrap_err(),
            GraphError::UnknownNode {
                id: "ghost".into(),
                context: "edge target".into()
            }
        );
    }

    #[test]
    fn cycles_are_reported_with_a_path() {
        let mut eb = ExprBuilder::new();
        let a = eb.var("a");
        let s = eb.sum(a);
        let sq = eb.square(s);
        let loss = eb.finish(sq).unwrap();
        let mut gb = GraphBuilder::new();
        gb.agent("a", "a", vec1(0.0))
            .agent("b", "b", vec1(0.0))
            .loss("loss", "loss", loss)
            .edge("a", "b")
            .edge("b", "a");
        match gb.build().unwrap_err() {
            GraphError::CycleDetected { cycle } => {
                assert!(cycle.len() >= 3);
                assert_eq!(cycle.first(), cycle.last());
                assert!(cycle.contains(&"a".to_string()) && cycle.contains(&"b".to_string()));
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn wiring_must_cover_template_exactly() {
        let mut tb = ExprBuilder::new();
        let u = tb.var("u");
        let v = tb.var("v");
        let a = tb.add(&[u, v]);
        let s = tb.sum(a);
        let template = tb.finish(s).unwrap();

        let mut eb = ExprBuilder::new();
        let f = eb.var("f");
        let sf = eb.sum(f);
        let sq = eb.square(sf);
        let loss = eb.finish(sq).unwrap();

        let mut gb = GraphBuilder::new();
        gb.agent("a", "a", vec1(0.0))
            .function("f", "f", template.clone(), &[("u", "a")])
            .loss("loss", "loss", loss.clone());
        match gb.build().unwrap_err() {
            GraphError::TemplateInputMismatch { function, detail } => {
                assert_eq!(function, "f");
                assert!(detail.contains("`v`"), "{detail}");
            }
            other => panic!("expected wiring mismatch, got {other:?}"),
        }

        let mut gb = GraphBuilder::new();
        gb.agent("a", "a", vec1(0.0))
            .function("f", "f", template, &[("u", "a"), ("v", "a"), ("w", "a")])
            .loss("loss", "loss", loss);
        match gb.build().unwrap_err() {
            GraphError::TemplateInputMismatch { detail, .. } => {
                assert!(detail.contains("`w`"), "{detail}");
            }
            other => panic!("expected wiring mismatch, got {other:?}"),
        }
    }

    #[test]
    fn loss_must_exist_and_be_unique_and_a_sink() {
        let mut gb = GraphBuilder::<f64>::new();
        gb.agent("a", "a", vec1(0.0));
        assert!(matches!(
            gb.build().unwrap_err(),
            GraphError::InvalidNode { .. }
        ));

        let mut eb = ExprBuilder::new();
        let a = eb.var("a");
        let s = eb.sum(a);
        let sq = eb.square(s);
        let loss = eb.finish(sq).unwrap();
        let mut gb = GraphBuilder::new();
        gb.agent("a", "a", vec1(0.0))
            .loss("l1", "l1", loss.clone())
            .loss("l2", "l2", loss.clone());
        assert_eq!(
            gb.build().unwrap_err(),
            GraphError::InvalidNode {
                id: "l2".into(),
                reason: "a graph has exactly one loss node".into()
            }
        );

        let mut gb = GraphBuilder::new();
        gb.agent("a", "a", vec1(0.0))
            .loss("loss", "loss", loss)
            .edge("loss", "a");
        assert!(matches!(
            gb.build().unwrap_err(),
            GraphError::InvalidNode { .. }
        ));
    }

    #[test]
    fn loss_referencing_unknown_node_is_rejected() {
        let mut eb = ExprBuilder::new();
        let a = eb.var("ghost");
        let s = eb.sum(a);
        let sq = eb.square(s);
        let loss = eb.finish(sq).unwrap();
        let mut gb = GraphBuilder::new();
        gb.agent("a", "a", vec1(0.0)).loss("loss", "loss", loss);
        assert_eq!(
            gb.build().unwrap_err(),
            GraphError::UnknownNode {
                id: "ghost".into(),
                context: "loss expression".into()
            }
        );
    }

    #[test]
    fn nodes_off_the_data_path_are_rejected() {
        let mut eb = ExprBuilder::new();
        let a = eb.var("a");
        let s = eb.sum(a);
        let sq = eb.square(s);
        let loss = eb.finish(sq).unwrap();
        // structural edge alone does not connect `b` to the loss
        let mut gb = GraphBuilder::new();
        gb.agent("a", "a", vec1(0.0))
            .agent("b", "b", vec1(0.0))
            .loss("loss", "loss", loss)
            .edge("b", "a");
        assert_eq!(
            gb.build().unwrap_err(),
            GraphError::DisconnectedFromLoss { id: "b".into() }
        );
    }

    #[test]
    fn zero_padded_ids_order_numerically() {
        let mut eb = ExprBuilder::new();
        let terms: Vec<_> = (0..12)
            .map(|i| {
                let v = eb.var(&format!("a{i:03}"));
                eb.sum(v)
            })
            .collect();
        let t = eb.add(&terms);
        let sq = eb.square(t);
        let loss = eb.finish(sq).unwrap();
        let mut gb = GraphBuilder::new();
        for i in 0..12 {
            let id = format!("a{i:03}");
            gb.agent(&id, &format!("agent {i}"), vec1(0.0));
        }
        gb.loss("zz_loss", "loss", loss);
        let g = gb.build().unwrap();
        let expect: Vec<String> = (0..12)
            .map(|i| format!("a{i:03}"))
            .chain(std::iter::once("zz_loss".to_string()))
            .collect();
        assert_eq!(g.topo_order(), &expect[..]);
        assert_eq!(g.slot_agents(), &(0..12).collect::<Vec<_>>()[..]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Random DAG: nodes in a shuffled creation order, edges only from
        /// earlier to later in that order, loss fed by every agent.
        fn arb_dag() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
            (2usize..9).prop_flat_map(|n| {
                let pairs = proptest::collection::vec((0..n, 0..n), 0..20)
                    .prop_map(move |raw| {
                        raw.into_iter()
                            .filter(|(a, b)| a != b)
                            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
                            .collect::<Vec<_>>()
                    });
                (Just(n), pairs)
            })
        }

        fn build_from(n: usize, edges: &[(usize, usize)]) -> Result<Graph<f64>, GraphError> {
            let mut eb = ExprBuilder::new();
            let terms: Vec<_> = (0..n)
                .map(|i| {
                    let v = eb.var(&format!("n{i:02}"));
                    eb.sum(v)
                })
                .collect();
            let t = eb.add(&terms);
            let sq = eb.square(t);
            let loss = eb.finish(sq).unwrap();
            let mut gb = GraphBuilder::new();
            for i in 0..n {
                let id = format!("n{i:02}");
                gb.agent(&id, &format!("node {i}"), vec1(0.0));
            }
            gb.loss("zz", "loss", loss);
            for (a, b) in edges {
                gb.edge(&format!("n{a:02}"), &format!("n{b:02}"));
            }
            gb.build()
        }

        proptest! {
            #[test]
            fn forward_edges_always_schedule((n, edges) in arb_dag()) {
                let g = build_from(n, &edges).expect("forward edges form a DAG");
                let pos: BTreeMap<&str, usize> = g
                    .topo_order()
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (id.as_str(), i))
                    .collect();
                for (a, b) in &edges {
                    let (ia, ib) = (format!("n{a:02}"), format!("n{b:02}"));
                    prop_assert!(pos[ia.as_str()] < pos[ib.as_str()]);
                }
                prop_assert_eq!(g.topo_order().last().map(String::as_str), Some("zz"));
            }

            #[test]
            fn reversing_an_edge_creates_a_cycle((n, edges) in arb_dag()) {
                prop_assume!(!edges.is_empty());
                let mut with_back = edges.clone();
                let (a, b) = edges[0];
                with_back.push((b, a));
                // (b, a) reverses an existing (a, b): a two-node cycle
                let err = build_from(n, &with_back).unwrap_err();
                let is_cycle = matches!(err, GraphError::CycleDetected { .. });
                prop_assert!(is_cycle, "expected cycle, got {:?}", err);
            }

            #[test]
            fn topo_order_is_stable((n, edges) in arb_dag()) {
                let g1 = build_from(n, &edges).expect("DAG");
                let g2 = build_from(n, &edges).expect("DAG");
                prop_assert_eq!(g1.topo_order(), g2.topo_order());
            }
        }
    }
}
