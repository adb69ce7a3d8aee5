//! Whole-run helpers shared by the CLI, the C ABI and the tests.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{ConfigError, ShootingError};
use crate::problem::{Costate, State};
use crate::sampler::TouchdownTriple;
use crate::shooting::{homotopy_delta, search_initial_guess, solve_tpbvp, ShootingGuess, ShootingResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub delta: f64,
    pub p0: [f64; 4],
    pub tf: f64,
    pub tf_s: f64,
    pub fuel_kg: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Result file of the nominal solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NominalSummary {
    pub config_hash: String,
    pub x0: State,
    pub stages: Vec<StageSummary>,
    pub tf_delta0_s: f64,
    pub tf_final_s: f64,
    pub delta_tf_s: f64,
    pub extra_fuel_kg: f64,
    pub final_delta: f64,
    pub final_p0: [f64; 4],
    pub final_tf: f64,
    /// `(p_r, p_u, p_v)` at touchdown of the final stage.
    pub touchdown_triple: [f64; 3],
    pub final_beta_deg: f64,
    pub min_delta_term: f64,
    pub max_delta_term: f64,
}

impl NominalSummary {
    pub fn triple(&self) -> TouchdownTriple {
        TouchdownTriple::new(self.touchdown_triple[0], self.touchdown_triple[1], self.touchdown_triple[2])
    }

    pub fn guess(&self) -> ShootingGuess {
        ShootingGuess { p0: Costate::from_slice(&self.final_p0), tf: self.final_tf }
    }
}

#[derive(Debug)]
pub struct NominalRun {
    pub summary: NominalSummary,
    pub stages: Vec<ShootingResult>,
}

#[derive(Debug, thiserror::Error)]
pub enum NominalError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("homotopy stage delta = {delta:e} failed: {source}")]
    Stage { delta: f64, source: ShootingError, solved: Vec<StageSummary> },
}

fn stage_summary(rc: &RunConfig, res: &ShootingResult) -> Result<StageSummary, ConfigError> {
    let cfg = rc.problem()?;
    Ok(StageSummary {
        delta: res.delta,
        p0: res.solution.p0.to_array(),
        tf: res.solution.tf,
        tf_s: cfg.time_s(res.solution.tf),
        fuel_kg: cfg.fuel_kg(res.solution.tf),
        residual_norm: res.residual_norm,
        iterations: res.iterations,
    })
}

/// Runs the weight continuation of `rc` from its configured guess, falling
/// back to the guess grid if the first stage does not converge from it.
pub fn solve_nominal(rc: &RunConfig) -> Result<NominalRun, NominalError> {
    let base = rc.problem()?;
    let x0 = rc.initial_state(&base);
    let opts = rc.shooting();
    let schedule = rc.delta_schedule();
    let guess = ShootingGuess { p0: Costate::from_slice(&rc.shooting_guess_p0), tf: rc.shooting_guess_tf };

    let first_cfg = base.with_delta(schedule[0])?;
    let start = match solve_tpbvp(&x0, &guess, &first_cfg, &opts) {
        Ok(r) => r.solution,
        Err(e) => {
            log::warn!("configured guess failed ({e}); searching the guess grid");
            search_initial_guess(&x0, &first_cfg, &opts)
                .map_err(|source| NominalError::Stage { delta: schedule[0], source, solved: Vec::new() })?
                .solution
        }
    };
    let out = homotopy_delta(&x0, &start, &schedule, &base, &opts, rc.homotopy_max_bisections);
    let solved = out.results.iter().map(|r| stage_summary(rc, r)).collect::<Result<Vec<_>, _>>()?;
    if let Some((delta, source)) = out.failure {
        return Err(NominalError::Stage { delta, source, solved });
    }

    let last = out.results.last().expect("schedule is never empty");
    let first = &solved[0];
    let fin = solved.last().expect("schedule is never empty");
    let td = last.trajectory.last().expect("converged trajectories have nodes");
    let (min_d, max_d) = last
        .trajectory
        .nodes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| (lo.min(n.delta_term), hi.max(n.delta_term)));
    let summary = NominalSummary {
        config_hash: rc.hash(),
        x0,
        tf_delta0_s: first.tf_s,
        tf_final_s: fin.tf_s,
        delta_tf_s: fin.tf_s - first.tf_s,
        extra_fuel_kg: fin.fuel_kg - first.fuel_kg,
        final_delta: fin.delta,
        final_p0: fin.p0,
        final_tf: fin.tf,
        touchdown_triple: [td.p.pr, td.p.pu, td.p.pv],
        final_beta_deg: td.beta.to_degrees(),
        min_delta_term: min_d,
        max_delta_term: max_d,
        stages: solved,
    };
    Ok(NominalRun { summary, stages: out.results })
}
