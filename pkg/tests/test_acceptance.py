"""End-to-end validation of the annealing simulator.

Each test prints a single PASS/FAIL summary line (through the capture
barrier, so it shows up in a plain ``pytest`` run) and then asserts its
bound.  Seeds are fixed; every statistical bound carries a multi-sigma
cushion over the values observed when the seeds were frozen, so a FAIL
points at a regression rather than an unlucky draw.

The full module takes roughly an hour on one core.  The heavyweight
pieces are the R = 10^4 ensembles behind the solver cross-checks and
the 8-qubit runs behind the qualitative dip/revival checks.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
import scipy.integrate
import scipy.optimize
import scipy.stats

from openanneal import (AnnealSchedule, BathSpec, IsingSpec, StepperOptions,
                        benchmark_scaling, build_frame, build_hamiltonian,
                        builtin_problem, chain_problem, compute_jump_rate,
                        drift_term, eval_schedule, gamma_ohmic, run_ensemble,
                        run_trajectory, sigma_z_couplings, solve_ame,
                        trajectory_seed)
from openanneal.cli import main as cli_main

TWO_PI = 2.0 * np.pi
OMEGA_C = 8.0 * np.pi          # 4 GHz cutoff in rad/ns
BETA_262 = 1.0 / (TWO_PI * 2.62)   # operating temperature 2.62 GHz
BETA_COLD = 1.0 / (TWO_PI * 0.15)  # cold bath for the 8-qubit runs
GRID101 = np.linspace(0.0, 1.0, 101)
SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def z_bath(n, g2, beta):
    return BathSpec(g2=g2, beta=beta, omega_c=OMEGA_C,
                    coupling_ops=sigma_z_couplings(n))


def report(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"{label}: {'PASS' if ok else 'FAIL'} [{detail}]", flush=True)
    assert ok, f"{label}: {detail}"


# ---------------------------------------------------------------- fixtures

def _oracle_pair(n, master_seed):
    spec = chain_problem(n, t_f=1000.0)
    bath = z_bath(n, 1e-4, BETA_262)
    opts = StepperOptions(rebuild_every=8)
    ame = solve_ame(spec, bath, GRID101, opts=opts)
    ens = run_ensemble(spec, bath, 10_000, 1, master_seed, GRID101,
                       opts=opts, chunk_size=10_000, compute_ci=False)
    return spec, bath, ame, ens


@pytest.fixture(scope="module")
def chain1_run():
    return _oracle_pair(1, 101)


@pytest.fixture(scope="module")
def chain2_run():
    return _oracle_pair(2, 102)


@pytest.fixture(scope="module")
def static_relaxation():
    """10^4 static single-qubit trajectories started in the excited state."""
    spec = IsingSpec(1, np.array([1.0]), {},
                     AnnealSchedule.constant(0.0, 1.0), t_f=1500.0)
    bath = BathSpec(g2=1e-3, beta=1.0, omega_c=OMEGA_C, coupling_ops=(SX,))
    psi1 = build_frame(spec, bath, 0.0).eig.vectors[:, 1].astype(complex)
    ens = run_ensemble(spec, bath, 10_000, 1, 4, np.linspace(0.0, 1.0, 11),
                       levels=2, opts=None, chunk_size=10_000, psi0=psi1,
                       compute_ci=False)
    return spec, bath, ens


@pytest.fixture(scope="module")
def chain8_frames():
    """Full (untruncated) Lindblad frames for chain8 at 11 anneal fractions."""
    spec = chain_problem(8)
    bath = z_bath(8, 1e-3, BETA_262)
    frames = [build_frame(spec, bath, s, 1e-8, 1e-8, None)
              for s in np.linspace(0.0, 1.0, 11)]
    return spec, bath, frames


@pytest.fixture(scope="module")
def chain8_cold_ensemble():
    """256 chain8 trajectories in a cold bath: dip, revival, net-jump flow.

    At 0.15 GHz the thermal energy matches the minimum gap, so excitation
    is confined to the gap region.  The ground-excited coupling matrix
    element dies out shortly after the gap, so relaxation only has a
    narrow window to act in; g^2 is set high enough that a visible
    fraction relaxes inside that window (much stronger coupling instead
    parks population in higher excited states and the revival shrinks
    again).
    """
    spec = chain_problem(8, t_f=800.0)
    bath = z_bath(8, 1.8e-2, BETA_COLD)
    opts = StepperOptions(rebuild_every=24, m_levels=20, tol_bohr=1e-6)
    return run_ensemble(spec, bath, 256, 1, 7108, GRID101, opts=opts,
                        chunk_size=64, compute_ci=False)


# ---------------------------------------------------------------- criteria

def test_criterion_1_trajectory_mean_matches_density_matrix(
        chain1_run, chain2_run, capsys):
    worst = 0.0
    for _, _, ame, ens in (chain1_run, chain2_run):
        dev = np.abs(ens.means[:, 0] - ame.populations[:, 0])
        bound = 3.0 * ens.stderrs[:, 0] + 1e-12
        worst = max(worst, float(np.max(dev / bound)))
    report(capsys, "criterion 1 (trajectory mean vs density-matrix solver)",
           worst < 1.0, f"max |dev|/(3 sigma) = {worst:.3f} over 2x101 points")


def test_criterion_2_gibbs_fixed_point(static_relaxation, capsys):
    spec, bath, ens = static_relaxation
    target = math.exp(-2.0)        # e^{-2 beta B0}, beta = B0 = 1

    ame = solve_ame(spec, bath, np.linspace(0.0, 1.0, 11), levels=2)
    p = ame.populations[-1]
    ame_err = abs(p[1] / p[0] - target)

    m, se = ens.means[-1], ens.stderrs[-1]
    ratio = m[1] / m[0]
    sigma = (se[1] + ratio * se[0]) / m[0]
    traj_dev = abs(ratio - target)

    ok = ame_err < 1e-6 and traj_dev < 3.0 * sigma
    report(capsys, "criterion 2 (Gibbs fixed point)", ok,
           f"AME ratio err {ame_err:.2e}; trajectories {traj_dev / sigma:.2f} sigma")


def test_criterion_3a_static_waiting_times_exponential(static_relaxation,
                                                       capsys):
    spec, bath, ens = static_relaxation
    times = np.array([traj[0].s_jump * spec.t_f
                      for traj in ens.events if traj])
    lam = gamma_ohmic(2.0, bath)   # |<0|sx|1>|^2 = 1 at gap 2
    stat = scipy.stats.kstest(times, "expon", args=(0.0, 1.0 / lam))
    ok = times.size > 9_900 and stat.pvalue > 0.01
    report(capsys, "criterion 3a (static waiting times exponential)", ok,
           f"KS p = {stat.pvalue:.4f} on {times.size} first-jump times")


def test_criterion_3b_two_segment_median_inversion(capsys):
    sched = AnnealSchedule.from_knots([(0.0, 0.0, 1.0), (0.4, 0.0, 1.0),
                                       (0.401, 0.0, 12.0), (1.0, 0.0, 12.0)])
    spec = IsingSpec(1, np.array([1.0]), {}, sched, t_f=30.0)
    unit = BathSpec(g2=1.0, beta=1.0, omega_c=50.0, coupling_ops=(SX,))
    bath = replace(unit, g2=0.05 / gamma_ohmic(2.0, unit))
    psi1 = build_frame(spec, bath, 0.0).eig.vectors[:, 1].astype(complex)
    ens = run_ensemble(spec, bath, 10_000, 1, 6,
                       np.array([0.0, 0.4, 0.401, 1.0]), opts=None,
                       chunk_size=10_000, psi0=psi1, compute_ci=False)
    empirical = np.median([traj[0].s_jump * spec.t_f
                           for traj in ens.events if traj])

    def cum_hazard(s):
        val, _ = scipy.integrate.quad(
            lambda u: gamma_ohmic(2.0 * eval_schedule(sched, u)[1], bath),
            0.0, s, points=[0.4, 0.401], limit=200)
        return val * spec.t_f

    s_med = scipy.optimize.brentq(lambda s: cum_hazard(s) - math.log(2.0),
                                  1e-9, 1.0)
    analytic = s_med * spec.t_f
    rel = abs(empirical - analytic) / analytic
    report(capsys, "criterion 3b (two-segment median inversion)", rel < 0.01,
           f"median {empirical:.4f} vs analytic {analytic:.4f} (rel {rel:.2%})")


def test_criterion_4_drift_vanishes_on_eigenstates(chain8_frames, capsys):
    _, _, frames = chain8_frames
    worst = 0.0
    for fr in frames:
        V = fr.eig.vectors
        ids = fr.eig.manifold_id
        for k in range(V.shape[1]):
            d = drift_term(V[:, k].astype(complex), fr)
            members = np.flatnonzero(ids == ids[k])
            if members.size > 1:
                Vm = V[:, members]
                d = d - Vm @ (Vm.conj().T @ d)   # out-of-manifold part
            worst = max(worst, float(np.linalg.norm(d)))
    report(capsys, "criterion 4 (drift vanishes on eigenstates)",
           worst < 1e-10, f"worst norm {worst:.2e} over 11x256 states")


def test_criterion_5_jump_rate_matches_golden_rule_sum(chain8_frames, capsys):
    _, bath, frames = chain8_frames
    z_diags = sigma_z_couplings(8)
    worst = 0.0
    for fr in frames:
        E, V = fr.eig.energies, fr.eig.vectors
        lam, _ = compute_jump_rate(V[:, 1].astype(complex), fr)
        lam_ref = 0.0
        for z in z_diags:
            amps = V.conj().T @ (z * V[:, 1])
            lam_ref += float(np.sum(gamma_ohmic(E[1] - E, bath)
                                    * np.abs(amps) ** 2))
        worst = max(worst, abs(lam - lam_ref) / lam_ref)
    report(capsys, "criterion 5 (jump rate equals explicit rate sum)",
           worst < 1e-12, f"worst rel dev {worst:.2e} at 11 anneal fractions")


def test_criterion_6_step_bound_convergence(chain2_run, capsys):
    spec, bath, _, base = chain2_run
    fine = run_ensemble(spec, bath, 10_000, 1, 102, GRID101,
                        opts=StepperOptions(eta=0.025, rebuild_every=8),
                        chunk_size=10_000, compute_ci=False)
    delta = np.abs(base.means[:, 0] - fine.means[:, 0])
    bound = base.stderrs[:, 0] + 1e-12
    worst = float(np.max(delta / bound))
    report(capsys, "criterion 6 (halved step bound within statistical error)",
           worst < 1.0, f"max |shift|/sigma = {worst:.4f}")


def test_criterion_7a_dip_and_partial_revival(chain8_cold_ensemble, capsys):
    p = chain8_cold_ensemble.means[:, 0]
    p_early = float(p[20])             # s = 0.2, before the gap region
    p_min = float(np.min(p[20:]))
    revival = float(p[-1]) - p_min
    ok = p_min < p_early - 0.15 and revival > 0.05
    report(capsys, "criterion 7a (ground-state dip and partial revival)", ok,
           f"early {p_early:.3f}, min {p_min:.3f}, final {float(p[-1]):.3f}")


def test_criterion_7b_single_trajectory_step_function(capsys):
    spec = chain_problem(8, t_f=30_000.0)
    bath = z_bath(8, 2e-4, BETA_COLD)
    opts = StepperOptions(rebuild_every=32, m_levels=6, tol_bohr=1e-6)
    grid = np.linspace(0.0, 1.0, 201)
    res = run_trajectory(spec, bath, trajectory_seed(901, 0), grid, opts=opts)
    pop = res.populations[:, 0]

    edges = [0.0] + sorted(e.s_jump for e in res.events) + [1.0 + 1e-12]
    worst = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        seg = pop[(grid > a) & (grid < b)]
        if seg.size >= 2:
            worst = max(worst, float(np.max(seg) - np.min(seg)))
    thermal = sum(1 for e in res.events if abs(e.omega) > 0.5)
    ok = (worst < 1e-6 and thermal >= 2
          and pop.min() < 0.1 and pop.max() > 0.9)
    report(capsys, "criterion 7b (step-function single trajectory)", ok,
           f"{len(res.events)} jumps ({thermal} thermal), "
           f"plateau variation {worst:.2e}")


def test_criterion_7c_net_jump_sign_flip_at_minimum_gap(chain8_cold_ensemble,
                                                        capsys):
    spec = chain_problem(8, t_f=800.0)
    scan = np.linspace(0.0, 1.0, 201)
    gaps = [np.linalg.eigvalsh(build_hamiltonian(spec, s).toarray())[:2]
            for s in scan]
    s_star = float(scan[int(np.argmin([e1 - e0 for e0, e1 in gaps]))])

    s_jump, flow = [], []
    for traj in chain8_cold_ensemble.events:
        for e in traj:
            if e.pre_gs_overlap < 0.5 < e.post_gs_overlap:
                s_jump.append(e.s_jump)
                flow.append(1)
            elif e.post_gs_overlap < 0.5 < e.pre_gs_overlap:
                s_jump.append(e.s_jump)
                flow.append(-1)
    order = np.argsort(s_jump)
    net = np.cumsum(np.asarray(flow)[order])
    k = int(np.argmin(net))
    s_flip = float(np.asarray(s_jump)[order][k])
    depth, recovery = int(net[k]), int(net[-1] - net[k])
    ok = depth <= -30 and recovery >= 12 and abs(s_flip - s_star) <= 0.10
    report(capsys, "criterion 7c (net-jump sign flip at the minimum gap)", ok,
           f"flip at s={s_flip:.3f} (min gap {s_star:.3f}), "
           f"net {depth} before, +{recovery} after")


def test_criterion_8_cost_scaling(capsys):
    specs = [chain_problem(n) for n in range(2, 9)]
    t0 = time.time()
    rep = benchmark_scaling(specs, lambda sp: z_bath(sp.n, 1e-3, BETA_262),
                            pilot_R=0, master_seed=13,
                            opts=StepperOptions(rebuild_every=8))
    wall = time.time() - t0
    ratio = np.asarray(rep.t_ame_step) / np.asarray(rep.t_traj_step)
    ok = (bool(np.all(np.diff(ratio) > 0.0)) and rep.ratio_slope >= 0.7
          and wall < 1800.0)
    report(capsys, "criterion 8 (density-matrix/trajectory cost scaling)", ok,
           f"ratio {ratio[0]:.1f} -> {ratio[-1]:.1f}, slope "
           f"{rep.ratio_slope:.2f}, {wall:.0f} s")


def test_criterion_9_worker_count_reproducibility(tmp_path, monkeypatch,
                                                  capsys):
    blobs = {}
    for w in (1, 2, 8):
        out = tmp_path / f"w{w}"
        monkeypatch.setenv("OPENANNEAL_OUTDIR", str(out))
        rc = cli_main(["run-trajectories", "--problem", "chain2",
                       "--temperature-ghz", "2.62", "--t-f-ns", "50",
                       "--grid-points", "21", "--trajectories", "64",
                       "--chunk-size", "8", "--seed", "11", "--g2", "1e-4",
                       "--rebuild-every", "8", "--workers", str(w)])
        assert rc == 0
        blobs[w] = ((out / "ensemble.csv").read_bytes(),
                    (out / "jumps.csv").read_bytes())
    ok = blobs[1] == blobs[2] == blobs[8]
    report(capsys, "criterion 9 (bit-identical output for 1/2/8 workers)", ok,
           "ensemble.csv and jumps.csv byte-compared")


def test_probe16_preset_truncated_trajectory_smoke(capsys):
    spec = replace(builtin_problem("probe16"), t_f=5.0)
    bath = z_bath(16, 1e-4, BETA_262)
    opts = StepperOptions(rebuild_every=128, m_levels=16, tol_bohr=1e-6)
    res = run_trajectory(spec, bath, trajectory_seed(31, 0),
                         np.linspace(0.0, 1.0, 11), opts=opts)
    pop = res.populations[:, 0]
    ok = (res.populations.shape == (11, 1) and bool(np.all(np.isfinite(pop)))
          and pop.min() > -1e-9 and pop.max() < 1.0 + 1e-9)
    report(capsys, "probe16 preset (truncated-spectrum smoke run)", ok,
           f"16-qubit trajectory sampled, final GS overlap {pop[-1]:.3f}")
