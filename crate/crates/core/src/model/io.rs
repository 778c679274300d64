//! JSON ingestion and emission of [`GameModel`].

use serde::{Deserialize, Serialize};

use super::{DriftBound, GameModel, LyapunovData, ModelBuilder, ModelError};

/// Action labels may be written as strings or numbers; they are kept as strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Label {
    Text(String),
    Number(serde_json::Number),
}

impl Label {
    fn into_string(self) -> String {
        match self {
            Label::Text(s) => s,
            Label::Number(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRecord {
    i: usize,
    u: usize,
    v: usize,
    j: usize,
    p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostRecord {
    i: usize,
    u: usize,
    v: usize,
    c: f64,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LyapunovDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    W: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    log_W: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ell: Option<Vec<f64>>,
    K: Vec<usize>,
    C: f64,
}

fn default_theta() -> f64 {
    1.0
}

/// Wire form of a model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    states: usize,
    actions_p1: Vec<Vec<Label>>,
    actions_p2: Vec<Vec<Label>>,
    transition: Vec<TransitionRecord>,
    cost: Vec<CostRecord>,
    #[serde(default = "default_theta")]
    theta: f64,
    i0: usize,
    #[serde(default)]
    closed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lyapunov: Option<LyapunovDoc>,
}

impl ModelDoc {
    pub fn into_model(self) -> Result<GameModel, ModelError> {
        let n = self.states;
        let mut b = ModelBuilder::new(n).theta(self.theta).i0(self.i0).closed(self.closed);
        if self.actions_p1.len() != n {
            return Err(ModelError::ActionListCount {
                player: "player 1",
                expected: n,
                found: self.actions_p1.len(),
            });
        }
        if self.actions_p2.len() != n {
            return Err(ModelError::ActionListCount {
                player: "player 2",
                expected: n,
                found: self.actions_p2.len(),
            });
        }
        for (i, (a1, a2)) in self.actions_p1.into_iter().zip(self.actions_p2).enumerate() {
            b = b.actions(
                i,
                a1.into_iter().map(Label::into_string).collect(),
                a2.into_iter().map(Label::into_string).collect(),
            );
        }
        for t in self.transition {
            b = b.transition(t.i, t.u, t.v, t.j, t.p);
        }
        for c in self.cost {
            b = b.cost(c.i, c.u, c.v, c.c);
        }
        if let Some(ly) = self.lyapunov {
            let log_w = match (ly.W, ly.log_W) {
                (Some(w), None) => w.into_iter().map(f64::ln).collect(),
                (None, Some(lw)) => lw,
                _ => return Err(ModelError::Lyapunov("exactly one of `W` or `log_W` is required".into())),
            };
            let bound = match (ly.gamma, ly.ell) {
                (Some(g), None) => DriftBound::Gamma(g),
                (None, Some(l)) => DriftBound::Ell(l),
                _ => return Err(ModelError::Lyapunov("exactly one of `gamma` or `ell` is required".into())),
            };
            b = b.lyapunov(LyapunovData { log_w, bound, k_set: ly.K, c: ly.C });
        }
        b.build()
    }

    pub fn from_model(m: &GameModel) -> Self {
        let n = m.states();
        let mut transition = Vec::new();
        let mut cost = Vec::new();
        for i in 0..n {
            let k = m.kernel(i);
            for u in 0..k.n_u() {
                for v in 0..k.n_v() {
                    for &(j, p) in k.row(u, v) {
                        transition.push(TransitionRecord { i, u, v, j, p });
                    }
                    cost.push(CostRecord { i, u, v, c: k.raw_cost(u, v) });
                }
            }
        }
        let lyapunov = m.lyapunov().map(|ly| {
            // Plain W when every entry is representable, log form otherwise.
            let (w, log_w) = if ly.log_w.iter().all(|&x| x < 700.0) {
                (Some(ly.log_w.iter().map(|x| x.exp()).collect()), None)
            } else {
                (None, Some(ly.log_w.clone()))
            };
            let (gamma, ell) = match &ly.bound {
                DriftBound::Gamma(g) => (Some(*g), None),
                DriftBound::Ell(l) => (None, Some(l.clone())),
            };
            LyapunovDoc { W: w, log_W: log_w, gamma, ell, K: ly.k_set.clone(), C: ly.c }
        });
        let labels = |v: &[String]| v.iter().cloned().map(Label::Text).collect::<Vec<_>>();
        ModelDoc {
            states: n,
            actions_p1: (0..n).map(|i| labels(m.actions_p1(i))).collect(),
            actions_p2: (0..n).map(|i| labels(m.actions_p2(i))).collect(),
            transition,
            cost,
            theta: m.theta(),
            i0: m.i0(),
            closed: m.is_closed(),
            lyapunov,
        }
    }
}

impl GameModel {
    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        doc.into_model()
    }

    pub fn from_json_reader<R: std::io::Read>(r: R) -> Result<Self, ModelError> {
        let doc: ModelDoc = serde_json::from_reader(r)?;
        doc.into_model()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelDoc::from_model(self)).expect("model serializes")
    }
}
