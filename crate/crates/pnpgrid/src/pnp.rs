//! Plug-in and unplug adjudication with local retuning.
//!
//! A topology change only alters the local models of the target DGU and its
//! neighbors, so only those are revalidated or resynthesized. Decisions are
//! pure evaluations; [`commit`] applies an allowed decision.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::invalid;
use crate::grid::{AugmentedDgu, DguId, DguParams, GridGraph, LineParams};
use crate::synthesis::{
    certify_global_stability, check_assumption_2, revalidate, solve_problem_O, verify_certificate,
    Assumption2Report, CertificateReport, ControllerGains, GlobalCertificate, LmiWeights,
    SynthesisError, SynthesisOptions,
};

#[derive(Debug, Clone, PartialEq)]
pub enum PlugRequest {
    PlugIn {
        id: DguId,
        dgu: DguParams,
        lines: BTreeMap<DguId, LineParams>,
    },
    Unplug {
        id: DguId,
    },
}

impl PlugRequest {
    pub fn target(&self) -> DguId {
        match self {
            PlugRequest::PlugIn { id, .. } | PlugRequest::Unplug { id } => *id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    /// Keep existing gains that still satisfy every design constraint on the new model.
    #[default]
    KeepIfValid,
    /// Resynthesize every DGU in the retune set.
    Retune,
}

impl std::str::FromStr for Policy {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "keep" | "keep-if-valid" => Ok(Policy::KeepIfValid),
            "retune" => Ok(Policy::Retune),
            _ => Err(invalid(format!("unknown policy `{s}` (keep|retune)"))),
        }
    }
}

/// Synthesis settings, with optional per-DGU overrides.
#[derive(Debug, Clone, Default)]
pub struct PnpOptions {
    pub weights: LmiWeights,
    pub synthesis: SynthesisOptions,
    pub per_dgu: BTreeMap<DguId, SynthesisOptions>,
}

impl PnpOptions {
    pub fn for_dgu(&self, id: DguId) -> &SynthesisOptions {
        self.per_dgu.get(&id).unwrap_or(&self.synthesis)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denial {
    /// `None` when the denial concerns the whole grid.
    pub dgu: Option<DguId>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpDecision {
    pub request: PlugRequest,
    pub allowed: bool,
    pub retune_set: BTreeSet<DguId>,
    pub new_gains: BTreeMap<DguId, ControllerGains>,
    pub kept: BTreeSet<DguId>,
    pub denials: Vec<Denial>,
    /// Certificate of every retune-set member that ended with gains.
    pub certificates: BTreeMap<DguId, CertificateReport>,
    /// Present when every retune-set member has gains.
    pub global: Option<GlobalCertificate>,
    pub assumption2: Option<Assumption2Report>,
}

/// Grid after the requested change.
pub fn post_graph(g: &GridGraph, req: &PlugRequest) -> crate::Result<GridGraph> {
    let mut out = g.clone();
    match req {
        PlugRequest::PlugIn { id, dgu, lines } => {
            if g.contains(*id) {
                return Err(invalid(format!("DGU {id} is already present")));
            }
            out.add_dgu(*id, *dgu)?;
            for (j, l) in lines {
                if !g.contains(*j) {
                    return Err(invalid(format!("line to unknown DGU {j}")));
                }
                out.add_line(*id, *j, *l)?;
            }
        }
        PlugRequest::Unplug { id } => {
            out.remove_dgu(*id)?;
        }
    }
    Ok(out)
}

fn retune_set(g: &GridGraph, req: &PlugRequest) -> BTreeSet<DguId> {
    match req {
        PlugRequest::PlugIn { id, lines, .. } => lines.keys().copied().chain([*id]).collect(),
        PlugRequest::Unplug { id } => g.neighbors(*id).into_iter().collect(),
    }
}

/// Evaluates a plug-in request against the current grid and gains.
pub fn evaluate_plug_in(
    g: &GridGraph,
    gains: &BTreeMap<DguId, ControllerGains>,
    req: &PlugRequest,
    opts: &PnpOptions,
    policy: Policy,
) -> crate::Result<PnpDecision> {
    if !matches!(req, PlugRequest::PlugIn { .. }) {
        return Err(invalid("expected a plug-in request"));
    }
    evaluate(g, gains, req, opts, policy)
}

/// Evaluates an unplug request against the current grid and gains.
pub fn evaluate_unplug(
    g: &GridGraph,
    gains: &BTreeMap<DguId, ControllerGains>,
    req: &PlugRequest,
    opts: &PnpOptions,
    policy: Policy,
) -> crate::Result<PnpDecision> {
    if !matches!(req, PlugRequest::Unplug { .. }) {
        return Err(invalid("expected an unplug request"));
    }
    evaluate(g, gains, req, opts, policy)
}

/// Dispatches on the request kind.
pub fn evaluate(
    g: &GridGraph,
    gains: &BTreeMap<DguId, ControllerGains>,
    req: &PlugRequest,
    opts: &PnpOptions,
    policy: Policy,
) -> crate::Result<PnpDecision> {
    let post = post_graph(g, req)?;
    let set = retune_set(g, req);
    let mut decision = PnpDecision {
        request: req.clone(),
        allowed: false,
        retune_set: set.clone(),
        new_gains: BTreeMap::new(),
        kept: BTreeSet::new(),
        denials: Vec::new(),
        certificates: BTreeMap::new(),
        global: None,
        assumption2: None,
    };
    for &k in &set {
        let aug = AugmentedDgu::for_dgu(&post, k)?;
        if policy == Policy::KeepIfValid {
            if let Some(old) = gains.get(&k) {
                if revalidate(&aug, old).passed() {
                    decision
                        .certificates
                        .insert(k, verify_certificate(&aug, old));
                    decision.kept.insert(k);
                    continue;
                }
            }
        }
        match solve_problem_O(&aug, &opts.weights, opts.for_dgu(k)) {
            Ok(new) => {
                let cert = verify_certificate(&aug, &new);
                if cert.is_valid() {
                    decision.certificates.insert(k, cert);
                    decision.new_gains.insert(k, new);
                } else {
                    decision.denials.push(Denial {
                        dgu: Some(k),
                        reason: "synthesized gains failed certificate verification".into(),
                    });
                }
            }
            Err(e) => decision.denials.push(Denial {
                dgu: Some(k),
                reason: denial_text(&e),
            }),
        }
    }
    if !decision.denials.is_empty() {
        return Ok(decision);
    }
    let merged = merged_gains(&post, gains, &decision)?;
    let global = certify_global_stability(&post, &merged)?;
    let etas = merged.iter().map(|(k, v)| (*k, v.eta)).collect();
    decision.assumption2 = Some(check_assumption_2(
        &post,
        &etas,
        opts.synthesis.assumption2_tol,
    ));
    if !global.spectral_ok {
        decision.denials.push(Denial {
            dgu: None,
            reason: format!(
                "global closed loop is not stable (max Re = {:e})",
                global.max_real_part
            ),
        });
    }
    decision.allowed = decision.denials.is_empty();
    decision.global = Some(global);
    Ok(decision)
}

fn denial_text(e: &SynthesisError) -> String {
    match e {
        SynthesisError::Infeasible { status } => format!("infeasible: {status}"),
        SynthesisError::NumericalFailure { status } => format!("numerical failure: {status}"),
        SynthesisError::InvalidInput(m) => format!("invalid input: {m}"),
    }
}

fn merged_gains(
    post: &GridGraph,
    gains: &BTreeMap<DguId, ControllerGains>,
    d: &PnpDecision,
) -> crate::Result<BTreeMap<DguId, ControllerGains>> {
    post.ids()
        .into_iter()
        .map(|id| {
            d.new_gains
                .get(&id)
                .or_else(|| gains.get(&id))
                .cloned()
                .map(|g| (id, g))
                .ok_or_else(|| invalid(format!("no gains for DGU {id}")))
        })
        .collect()
}

/// Applies an allowed decision, returning the new grid and gain set.
pub fn commit(
    g: &GridGraph,
    gains: &BTreeMap<DguId, ControllerGains>,
    d: &PnpDecision,
) -> crate::Result<(GridGraph, BTreeMap<DguId, ControllerGains>)> {
    if !d.allowed {
        return Err(invalid("cannot commit a denied request"));
    }
    let post = post_graph(g, &d.request)?;
    let mut out = gains.clone();
    if let PlugRequest::Unplug { id } = d.request {
        out.remove(&id);
    }
    out.extend(d.new_gains.clone());
    Ok((post, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::synthesize_grid;

    fn dgu() -> DguParams {
        DguParams::new(0.2, 1.8e-3, 2.2e-3, 100.0, Some(10.0)).unwrap()
    }

    fn line() -> LineParams {
        LineParams::new(0.05, 1.8e-6).unwrap()
    }

    fn chain(n: DguId) -> (GridGraph, BTreeMap<DguId, ControllerGains>) {
        let mut g = GridGraph::new();
        for i in 1..=n {
            g.add_dgu(i, dgu()).unwrap();
            if i > 1 {
                g.add_line(i - 1, i, line()).unwrap();
            }
        }
        let gains = synthesize_grid(&g, &LmiWeights::default(), &SynthesisOptions::default())
            .into_iter()
            .map(|(k, v)| (k, v.unwrap()))
            .collect();
        (g, gains)
    }

    #[test]
    fn plug_into_empty_grid() {
        let req = PlugRequest::PlugIn {
            id: 1,
            dgu: dgu(),
            lines: BTreeMap::new(),
        };
        let d = evaluate_plug_in(
            &GridGraph::new(),
            &BTreeMap::new(),
            &req,
            &PnpOptions::default(),
            Policy::KeepIfValid,
        )
        .unwrap();
        assert!(d.allowed);
        assert_eq!(d.retune_set, BTreeSet::from([1]));
        assert!(d.new_gains.contains_key(&1));
    }

    #[test]
    fn plug_in_is_local() {
        let (g, gains) = chain(4);
        let req = PlugRequest::PlugIn {
            id: 5,
            dgu: dgu(),
            lines: BTreeMap::from([(4, line())]),
        };
        let d = evaluate(&g, &gains, &req, &PnpOptions::default(), Policy::Retune).unwrap();
        assert!(d.allowed, "{:?}", d.denials);
        assert_eq!(d.retune_set, BTreeSet::from([4, 5]));
        let (_, after) = commit(&g, &gains, &d).unwrap();
        for k in 1..=3 {
            assert_eq!(after[&k], gains[&k]);
        }
    }

    #[test]
    fn forced_infeasible_neighbor_is_named() {
        let (g, gains) = chain(2);
        let mut opts = PnpOptions::default();
        opts.per_dgu.insert(
            2,
            SynthesisOptions {
                feasibility_margin: 1e12,
                ..Default::default()
            },
        );
        let req = PlugRequest::PlugIn {
            id: 3,
            dgu: dgu(),
            lines: BTreeMap::from([(2, line())]),
        };
        let d = evaluate(&g, &gains, &req, &opts, Policy::Retune).unwrap();
        assert!(!d.allowed);
        assert_eq!(d.denials[0].dgu, Some(2));
        assert!(commit(&g, &gains, &d).is_err());
    }

    #[test]
    fn unplug_isolated_is_trivial() {
        let mut g = GridGraph::new();
        g.add_dgu(1, dgu()).unwrap();
        g.add_dgu(2, dgu()).unwrap();
        let gains = synthesize_grid(&g, &LmiWeights::default(), &SynthesisOptions::default())
            .into_iter()
            .map(|(k, v)| (k, v.unwrap()))
            .collect();
        let d = evaluate_unplug(
            &g,
            &gains,
            &PlugRequest::Unplug { id: 2 },
            &PnpOptions::default(),
            Policy::KeepIfValid,
        )
        .unwrap();
        assert!(d.allowed);
        assert!(d.retune_set.is_empty());
    }

    #[test]
    fn unplug_that_disconnects_is_evaluated() {
        let (g, gains) = chain(3);
        let d = evaluate_unplug(
            &g,
            &gains,
            &PlugRequest::Unplug { id: 2 },
            &PnpOptions::default(),
            Policy::KeepIfValid,
        )
        .unwrap();
        assert_eq!(d.retune_set, BTreeSet::from([1, 3]));
        assert!(d.allowed, "{:?}", d.denials);
        assert!(d.global.as_ref().unwrap().spectral_ok);
    }

    #[test]
    fn evaluation_is_idempotent() {
        let (g, gains) = chain(2);
        let req = PlugRequest::PlugIn {
            id: 3,
            dgu: dgu(),
            lines: BTreeMap::from([(1, line())]),
        };
        let a = evaluate(&g, &gains, &req, &PnpOptions::default(), Policy::Retune).unwrap();
        let b = evaluate(&g, &gains, &req, &PnpOptions::default(), Policy::Retune).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_requests() {
        let (g, gains) = chain(2);
        let dup = PlugRequest::PlugIn {
            id: 1,
            dgu: dgu(),
            lines: BTreeMap::new(),
        };
        assert!(evaluate(&g, &gains, &dup, &PnpOptions::default(), Policy::Retune).is_err());
        assert!(evaluate_plug_in(
            &g,
            &gains,
            &PlugRequest::Unplug { id: 1 },
            &PnpOptions::default(),
            Policy::Retune
        )
        .is_err());
        assert!(evaluate(
            &g,
            &gains,
            &PlugRequest::Unplug { id: 9 },
            &PnpOptions::default(),
            Policy::Retune
        )
        .is_err());
    }
}
