"""
Experiment Controller: certificate, simulation and bound orchestration

Coordinates one experiment end to end

Experiment Flow:
    build model   MDP (file / inline / generated) -> Q*, sampler, d
        ↓
    certify       switching family -> JSR bracket -> V_eps constants / quadratic search
        ↓
    simulate      seeded replications (seed = master_seed XOR run index)
        ↓
    bound         closed-form curves on the recorded k grid
        ↓
    validate      identity gates, then empirical mean - slack * SE vs bound
"""

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from scipy import linalg

from src.bounds.curves import BoundCurve, BoundParams, bound_curve, cross_check_formulas, rowslack_rate
from src.certificates.jsr_lyapunov import JsrLyapunov, veps_constants, veps_eval
from src.certificates.quadratic import QuadSearchResult, quad_search
from src.learning.samplers import IidSampler, MarkovSampler, derive_seed
from src.learning.simulator import RecordOptions, recorded_ks, run_trajectory, simulate_runs
from src.mdp.model import Mdp, load_mdp, q_array, random_mdp, solve_q_star
from src.mdp.policies import StochasticPolicy, hull_weights
from src.pipeline.config import ExperimentConfig, GeneratorSpec, load_defaults, resolve_path
from src.switching.family import (
    SwitchingFamily,
    build_family,
    hull_reconstruction_error,
    max_linearization_residual,
    verify_direct_representation,
    verify_markov_representation,
)
from src.switching.jsr import JsrReport, jsr_bounds, row_sum_rate
from src.utils.errors import InvariantViolationError
from src.utils.io import content_hash
from src.utils.logger import CheckLogger, SystemLogger
from src.utils.metrics import RunningMoments, TrajectoryMetrics

EXAMPLE_GAMMA = 0.9
EXAMPLE_ALPHA = 0.9
EXAMPLE_D = (0.1, 0.9)
EXAMPLE_M = ((0.9505, 0.0405), (0.3645, 0.5545))
EXAMPLE_RHO = 0.9848
EXAMPLE_RHO_ROW = 0.991
EXAMPLE_JSR_DEPTH = 64

FORMULA_TOL = 1e-12


@dataclass
class ExperimentModel:
    """Everything a run needs besides the step size"""
    mdp: Mdp
    mode: str
    sampler: Union[IidSampler, MarkovSampler]
    d: np.ndarray
    q0: np.ndarray
    q_star: np.ndarray


@dataclass
class CertificationResult:
    """JSR bracket plus whichever certificates were requested"""
    family: SwitchingFamily
    jsr: JsrReport
    lyapunov: Optional[JsrLyapunov] = None
    quad: Optional[QuadSearchResult] = None

    @property
    def rho_row(self) -> float:
        return float(self.jsr.rho_row)

    def comparison_table(self) -> pd.DataFrame:
        """rho_row vs JSR bracket vs certificate rates"""
        rows = [
            ('rho_row', self.rho_row),
            ('jsr_lower', self.jsr.lower),
            ('jsr_upper', self.jsr.upper),
            ('jsr_certified_upper', self.jsr.certified_upper),
        ]
        if self.lyapunov is not None:
            rows += [('beta_eps', self.lyapunov.beta_eps), ('C_eps', self.lyapunov.C_eps)]
        if self.quad is not None:
            if self.quad.found:
                rows += [('quad_beta', self.quad.certificate.beta),
                         ('quad_condition', self.quad.certificate.condition)]
            else:
                rows.append(('quad_beta', 'procedure failed'))
        return pd.DataFrame(rows, columns=['quantity', 'value'])

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {'jsr': self.jsr.to_dict(), 'n_modes': len(self.family)}
        if self.lyapunov is not None:
            out['jsr_lyapunov'] = self.lyapunov.to_dict()
        if self.quad is not None:
            out['quad'] = self.quad.to_dict()
        return out


@dataclass
class ValidationReport:
    """
    Empirical curves against bound curves

    Attributes:
        table: One row per (certificate kind, k) with the CSV columns
        gates: Identity residual gates {name: {value, tolerance, passed}}
        violation: Some row has mean - se_slack * SE above its bound
        se_slack: Standard-error multiplier used in the comparison
        certificates: Serialized certificates
        metadata: Config hash, run counts and seeds
    """
    table: pd.DataFrame
    gates: Dict[str, Dict[str, Any]]
    violation: bool
    se_slack: float
    certificates: Dict[str, Any]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'violation': self.violation,
            'se_slack': self.se_slack,
            'gates': self.gates,
            'certificates': self.certificates,
            'metadata': self.metadata,
            'rows': self.table.to_dict(orient='records'),
        }


class ExperimentController:
    """
    Experiment Controller: one config, every stage

    Each public method is one CLI subcommand; later stages reuse earlier
    ones, so validate runs certify, simulate and bound on the same model.
    """

    def __init__(self, defaults_path: Optional[str] = None, log_level: Optional[str] = None):
        """
        Initialize Experiment Controller

        Args:
            defaults_path: Path to the library defaults (config.yaml)
            log_level: Overrides system.log_level from the defaults
        """
        self.defaults = load_defaults(defaults_path)
        level = log_level or self.defaults['system']['log_level']
        self.logger = SystemLogger("ExperimentController", level)

    # ------------------------------------------------------------------
    # Worked example
    # ------------------------------------------------------------------

    def reproduce_example(self) -> Dict[str, Any]:
        """
        Two-state, single-action instance where the direct rate beats rho_row

        Returns:
            Dictionary with M, rho(M), rho_row, trace, det, the JSR bracket
            and the individual checks

        Raises:
            InvariantViolationError: If any reference figure is not met
        """
        mdp = Mdp(P=np.full((2, 1, 2), 0.5), r=np.zeros((2, 1, 2)), gamma=EXAMPLE_GAMMA)
        family = build_family(mdp, np.array(EXAMPLE_D), EXAMPLE_ALPHA)
        M = family.modes[0]
        rho = float(np.max(np.abs(linalg.eigvals(M))))
        rho_row = row_sum_rate(family)
        bracket = jsr_bounds(family, max_depth=EXAMPLE_JSR_DEPTH)

        checks = {
            'M_entries': float(np.max(np.abs(M - np.array(EXAMPLE_M)))) <= 1e-12,
            'rho_M': abs(rho - EXAMPLE_RHO) <= 5e-4,
            'rho_row': abs(rho_row - EXAMPLE_RHO_ROW) <= 1e-12,
            'strict_gap': rho < rho_row,
            'bracket_below_rho_row': bracket.upper < rho_row,
        }
        result = {
            'M': M.tolist(),
            'rho_M': rho,
            'rho_row': rho_row,
            'trace': float(np.trace(M)),
            'det': float(linalg.det(M)),
            'jsr_lower': bracket.lower,
            'jsr_upper': bracket.upper,
            'checks': checks,
            'passed': all(checks.values()),
        }
        self.logger.info(f"Example: rho(M)={rho:.6f}, rho_row={rho_row:.6f}, "
                         f"JSR in [{bracket.lower:.6f}, {bracket.upper:.6f}]")
        failed = [name for name, ok in checks.items() if not ok]
        if failed:
            raise InvariantViolationError(f"Example figures not reproduced: {failed}")
        return result

    # ------------------------------------------------------------------
    # Model
    # ------------------------------------------------------------------

    def generate_mdp(self, spec: GeneratorSpec) -> Mdp:
        self.logger.info(f"Generating {spec.n_states}x{spec.n_actions} MDP (seed {spec.seed})")
        return random_mdp(spec.n_states, spec.n_actions, spec.gamma, spec.reward_scale, spec.seed)

    def build_model(self, config: ExperimentConfig, base_dir: Union[str, Path, None] = None) -> ExperimentModel:
        """Resolve the MDP, sampler, Q_0 and Q* of a config"""
        spec = config.mdp
        if spec.path is not None:
            mdp = load_mdp(resolve_path(spec.path, base_dir))
        elif spec.inline is not None:
            mdp = Mdp.from_dict(spec.inline)
        else:
            mdp = self.generate_mdp(spec.generate)

        sampler_spec = config.sampler
        if sampler_spec.kind == "iid":
            d = (np.full(mdp.n_pairs, 1.0 / mdp.n_pairs) if sampler_spec.d is None
                 else np.asarray(sampler_spec.d, dtype=float))
            sampler = IidSampler(d, seed=config.master_seed)
            d = sampler.d
        else:
            behavior = (StochasticPolicy.uniform(mdp.n_states, mdp.n_actions) if sampler_spec.behavior is None
                        else StochasticPolicy(np.asarray(sampler_spec.behavior, dtype=float)))
            sampler = MarkovSampler(mdp, behavior, seed=config.master_seed,
                                    initial_coord=sampler_spec.initial_coord)
            d = sampler.stationary

        q0 = np.zeros(mdp.n_pairs) if config.q0 is None else q_array(np.asarray(config.q0, dtype=float), mdp)
        q_star = np.asarray(solve_q_star(
            mdp,
            tol=self.defaults['mdp']['q_star_tol'],
            max_iter=self.defaults['mdp']['value_iteration_cap'],
        ))
        self.logger.debug(f"Model: {mdp.n_states} states, {mdp.n_actions} actions, d_min={d.min():.4g}")
        return ExperimentModel(mdp=mdp, mode=sampler_spec.kind, sampler=sampler, d=d, q0=q0, q_star=q_star)

    # ------------------------------------------------------------------
    # Certificates
    # ------------------------------------------------------------------

    def certify(self, config: ExperimentConfig, model: ExperimentModel) -> CertificationResult:
        """JSR bracket, then V_eps constants and/or quadratic search"""
        jsr_defaults = self.defaults['jsr']
        lyap_defaults = self.defaults['lyapunov']
        spec = config.certificate

        family = build_family(model.mdp, model.d, config.alpha, cap=self.defaults['mdp']['policy_cap'])
        bracket = jsr_bounds(
            family,
            max_depth=spec.jsr.depth or jsr_defaults['max_depth'],
            budget=jsr_defaults['budget'],
            norm=jsr_defaults['norm'],
            prune_slack=jsr_defaults['prune_slack'],
        )
        self.logger.info(f"JSR in [{bracket.lower:.6f}, {bracket.upper:.6f}], rho_row={bracket.rho_row:.6f}")
        result = CertificationResult(family=family, jsr=bracket)

        if spec.kind in ("jsr", "both"):
            result.lyapunov = veps_constants(
                family,
                bracket,
                eps=self._resolve_eps(spec.jsr.eps, bracket),
                t=lyap_defaults['t'] if spec.jsr.t is None else spec.jsr.t,
                budget=spec.jsr.budget or lyap_defaults['budget'],
                k_cap=lyap_defaults['k_cap'],
            )
            self.logger.info(f"V_eps: beta_eps={result.lyapunov.beta_eps:.6f}, C_eps={result.lyapunov.C_eps:.4f}")

        if spec.kind in ("quad", "both"):
            grid = spec.quad.beta_grid or lyap_defaults['beta_grid']
            result.quad = quad_search(family, grid, max_iter=lyap_defaults['quad_max_iter'])
            if result.quad.found:
                self.logger.info(f"Quadratic certificate found at beta={result.quad.certificate.beta:.6f}")
            else:
                self.logger.info("Quadratic search: procedure failed (no infeasibility claim)")
        return result

    def _resolve_eps(self, eps: Optional[float], bracket: JsrReport) -> float:
        """Configured eps, else the default capped at half the distance to 1"""
        if eps is not None:
            return eps
        return min(self.defaults['lyapunov']['eps'], 0.5 * (1.0 - bracket.certified_upper))

    # ------------------------------------------------------------------
    # Simulation
    # ------------------------------------------------------------------

    def run_seeds(self, config: ExperimentConfig) -> List[int]:
        return [derive_seed(config.master_seed, i) for i in range(config.n_runs)]

    def simulate(
        self,
        config: ExperimentConfig,
        model: ExperimentModel,
        certification: Optional[CertificationResult] = None,
    ) -> TrajectoryMetrics:
        """
        Replications in batches, reduced through merge-safe accumulators

        V_eps^t(e_k) and e_k^T H e_k are tracked when the certificates exist.
        """
        record_every = config.record_every or self.defaults['simulation']['record_every']
        batch_size = self.defaults['validation']['run_batch']
        seeds = self.run_seeds(config)
        lyap = certification.lyapunov if certification else None
        quad = None
        if certification and certification.quad and certification.quad.found:
            quad = certification.quad.certificate

        start = time.time()
        total: Optional[TrajectoryMetrics] = None
        for first in range(0, len(seeds), batch_size):
            batch = simulate_runs(
                model.mode, model.mdp, model.sampler, config.alpha, config.steps,
                seeds[first:first + batch_size], model.q0, model.q_star, record_every,
            )
            part = self._batch_metrics(batch.ks, batch.errors, lyap, quad)
            total = part if total is None else total.merge(part)
        self.logger.info(f"Simulated {len(seeds)} runs x {config.steps} steps in {time.time() - start:.2f}s")
        return total

    def _batch_metrics(self, ks, errors, lyap, quad) -> TrajectoryMetrics:
        n_runs, n_k, n = errors.shape
        metrics = TrajectoryMetrics(
            ks=ks,
            err_inf=RunningMoments.empty(n_k),
            err_2=RunningMoments.empty(n_k),
            veps=RunningMoments.empty(n_k) if lyap is not None else None,
            vquad=RunningMoments.empty(n_k) if quad is not None else None,
        )
        veps_values = None
        if lyap is not None:
            veps_values = veps_eval(lyap, errors.reshape(-1, n)).reshape(n_runs, n_k)
        for run in range(n_runs):
            e = errors[run]
            metrics.err_inf.push(np.max(np.abs(e), axis=1))
            metrics.err_2.push(np.linalg.norm(e, axis=1))
            if veps_values is not None:
                metrics.veps.push(veps_values[run])
            if quad is not None:
                metrics.vquad.push(np.einsum('ki,ij,kj->k', e, quad.H, e))
        return metrics

    # ------------------------------------------------------------------
    # Bounds
    # ------------------------------------------------------------------

    def bound(
        self,
        config: ExperimentConfig,
        model: ExperimentModel,
        certification: CertificationResult,
    ) -> Dict[str, BoundCurve]:
        """Bound curves on the recorded k grid"""
        ks = recorded_ks(config.steps, config.record_every or self.defaults['simulation']['record_every'])
        kinds = config.bounds or self._default_kinds(model.mode, certification)
        family = certification.family
        e0 = model.q0 - model.q_star
        curves: Dict[str, BoundCurve] = {}

        for kind in kinds:
            if kind.startswith("quad"):
                if model.mode != "iid":
                    self.logger.warning(f"Skipping '{kind}': quadratic bounds assume i.i.d. sampling")
                    continue
                if certification.quad is None or not certification.quad.found:
                    self.logger.warning(f"Skipping '{kind}': no quadratic certificate")
                    continue
                cert = certification.quad.certificate
                params = BoundParams.for_run(model.mdp, config.alpha, model.q0, model.q_star,
                                             beta=cert.beta, d_min=family.d_min)
                curves[kind] = bound_curve(kind, params, ks, cert=cert)
                continue

            if kind == "markov_rowslack":
                slack, _ = rowslack_rate(self._plain_params(config, model, family))
                lyap = veps_constants(family, certification.jsr, eps=slack, t=0,
                                      k_cap=self.defaults['lyapunov']['k_cap'])
            else:
                lyap = certification.lyapunov
                if lyap is None:
                    self.logger.warning(f"Skipping '{kind}': no JSR certificate")
                    continue
            params = BoundParams.for_run(model.mdp, config.alpha, model.q0, model.q_star,
                                         beta=lyap.beta_eps, C=lyap.C_eps, d_min=family.d_min)
            if config.validation.initial_value == "truncated" and kind.endswith("moment"):
                params = replace(params, v0=veps_eval(lyap, e0))
            curves[kind] = bound_curve(kind, params, ks, jsr_upper=lyap.anchor)
        return curves

    def _plain_params(self, config, model, family) -> BoundParams:
        return BoundParams.for_run(model.mdp, config.alpha, model.q0, model.q_star, beta=0.0,
                                   d_min=family.d_min)

    @staticmethod
    def _default_kinds(mode: str, certification: CertificationResult) -> List[str]:
        kinds: List[str] = []
        if certification.lyapunov is not None:
            kinds += ["veps_moment", "veps_final"] if mode == "iid" else ["markov_moment", "markov_final"]
        if mode == "iid" and certification.quad is not None and certification.quad.found:
            kinds += ["quad_moment", "quad_final"]
        return kinds

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def identity_gates(self, config: ExperimentConfig, model: ExperimentModel,
                       family: SwitchingFamily) -> Dict[str, Dict[str, Any]]:
        """Exact-representation, linearization, convex-hull and formula gates"""
        vdef = self.defaults['validation']
        steps = min(config.steps, vdef['gate_steps'])
        sampler = model.sampler.with_seed(derive_seed(config.master_seed, 0))
        record = run_trajectory(model.mode, model.mdp, sampler, config.alpha, steps,
                                q0=model.q0, q_star=model.q_star, options=RecordOptions(keep_q=True))

        rtol = vdef['direct_residual_tol']
        gates: Dict[str, Dict[str, Any]] = {}
        if model.mode == "iid":
            gates['direct_residual'] = self._gate(verify_direct_representation(record, family), rtol)
        else:
            markov = verify_markov_representation(record, family)
            gates['markov_sample_path_residual'] = self._gate(markov['sample_path'], rtol)
            gates['markov_decomposition_residual'] = self._gate(markov['decomposition'], rtol)
        gates['linearization_residual'] = self._gate(
            max_linearization_residual(record, stride=vdef['linearization_stride']), vdef['linearization_tol'])

        rng = np.random.Generator(np.random.Philox(key=config.master_seed))
        hull_error, weight_error = 0.0, 0.0
        for _ in range(vdef['hull_samples']):
            mu = StochasticPolicy.random(rng, model.mdp.n_states, model.mdp.n_actions)
            hull_error = max(hull_error, hull_reconstruction_error(family, mu))
            weights = hull_weights(mu, cap=len(family))
            weight_error = max(weight_error, abs(sum(weights.values()) - 1.0))
        gates['hull_reconstruction'] = self._gate(hull_error, 1e-12)
        gates['hull_weight_sum'] = self._gate(weight_error, 1e-12)
        gates['bound_transcription'] = self._gate(cross_check_formulas(seed=config.master_seed), FORMULA_TOL)
        return gates

    @staticmethod
    def _gate(value: float, tolerance: float) -> Dict[str, Any]:
        return {'value': float(value), 'tolerance': float(tolerance), 'passed': bool(value <= tolerance)}

    def validate(self, config: ExperimentConfig, model: ExperimentModel) -> ValidationReport:
        """
        Run the identity gates, then compare empirical curves to the bounds

        Raises:
            InvariantViolationError: If an identity gate fails (the bound
                comparison would be meaningless)
        """
        certification = self.certify(config, model)
        config_hash = content_hash(config.model_dump())
        run_label = f"{config.outputs.prefix}:{config_hash[:12]}"

        gates = self.identity_gates(config, model, certification.family)
        check_logger = CheckLogger()
        for name, gate in gates.items():
            check_logger.log_check(run_label, name, gate['value'], gate['tolerance'])
        failed = [name for name, gate in gates.items() if not gate['passed']]
        if failed:
            self.logger.error(f"Identity gates failed: {failed}")
            raise InvariantViolationError(f"Identity gates failed: {failed}")

        metrics = self.simulate(config, model, certification)
        curves = self.bound(config, model, certification)
        se_slack = self.defaults['validation']['se_slack'] if config.validation.se_slack is None \
            else config.validation.se_slack

        table = self.comparison_rows(metrics, curves, se_slack)
        violation = bool(table[['violation_moment', 'violation_final']].any().any()) if len(table) else False
        if violation:
            self.logger.warning(f"Bound violation beyond {se_slack} standard errors")

        return ValidationReport(
            table=table,
            gates=gates,
            violation=violation,
            se_slack=float(se_slack),
            certificates=certification.to_dict(),
            metadata={
                'config_hash': config_hash,
                'mode': model.mode,
                'n_runs': config.n_runs,
                'steps': config.steps,
                'master_seed': config.master_seed,
                'bounds': {kind: curve.to_dict() for kind, curve in curves.items()},
            },
        )

    @staticmethod
    def comparison_rows(metrics: TrajectoryMetrics, curves: Dict[str, BoundCurve], se_slack: float) -> pd.DataFrame:
        """
        One block of rows per certificate kind

        emp_veps_* holds the Lyapunov value of the row's certificate:
        V_eps^t(e_k) for jsr rows and e_k^T H e_k for quad rows.
        """
        frames = []
        for cert_kind, moment_kind, final_kind, values in (
            ('jsr', 'veps_moment', 'veps_final', metrics.veps),
            ('jsr:markov', 'markov_moment', 'markov_final', metrics.veps),
            ('jsr:rowslack', None, 'markov_rowslack', metrics.veps),
            ('quad', 'quad_moment', 'quad_final', metrics.vquad),
        ):
            moment = curves.get(moment_kind) if moment_kind else None
            final = curves.get(final_kind)
            if moment is None and final is None:
                continue
            n_k = len(metrics.ks)
            frame = pd.DataFrame({
                'k': metrics.ks.astype(int),
                'emp_err_inf_mean': metrics.err_inf.mean,
                'emp_err_inf_se': metrics.err_inf.standard_error,
                'emp_veps_mean': values.mean if values is not None else np.full(n_k, np.nan),
                'emp_veps_se': values.standard_error if values is not None else np.full(n_k, np.nan),
                'bound_final': final.values if final is not None else np.full(n_k, np.nan),
                'bound_moment': moment.values if moment is not None else np.full(n_k, np.nan),
                'cert_kind': cert_kind,
            })
            frame['violation_moment'] = (frame['emp_veps_mean'] - se_slack * frame['emp_veps_se']
                                         > frame['bound_moment'])
            frame['violation_final'] = (frame['emp_err_inf_mean'] - se_slack * frame['emp_err_inf_se']
                                        > frame['bound_final'])
            frames.append(frame)
        if not frames:
            return pd.DataFrame(columns=[
                'k', 'emp_err_inf_mean', 'emp_err_inf_se', 'emp_veps_mean', 'emp_veps_se',
                'bound_final', 'bound_moment', 'cert_kind', 'violation_moment', 'violation_final',
            ])
        return pd.concat(frames, ignore_index=True)
