import hashlib
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from vp_plots import FormatError, read_run_csv, render, render_adaptivity
from vp_plots.figures import FigureSpec, render_density

DIM = 1
COLUMNS = ("t,mass,mass_rel_err,momentum_1,momentum_abs_err,electric_energy,"
           "kinetic_energy,total_energy,total_energy_rel_err,rank,"
           "n_elements_x,n_elements_v,continuity_res_rho,continuity_res_j_1,"
           "cfl_flag,wall_time_s")


def synthetic_csv(path, n=400, gamma=0.153):
    t = np.linspace(0, 10, n)
    e = 1.2566e-3 * np.exp(-2 * gamma * t) * (np.cos(1.4156 * t) ** 2 + 1e-6)
    rows = [COLUMNS]
    for i in range(n):
        rows.append(",".join(f"{x:.17g}" for x in [
            t[i], 4 * math.pi, 1e-12 * i, 0.0, 1e-13 * i, e[i], 6.28, 6.28,
            1e-10, 10, 32, 64, 1e-12, 1e-13, 0, 5e-3]))
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return path


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_render_four_panel(tmp_path):
    csv = synthetic_csv(str(tmp_path / "run.csv"))
    before = sha(csv)
    out = render(FigureSpec([csv], str(tmp_path / "fig.png"), gamma=0.153))
    assert os.path.getsize(out) > 10_000
    assert sha(csv) == before  # inputs untouched


def test_render_overlay_two_runs(tmp_path):
    c1 = synthetic_csv(str(tmp_path / "a.csv"))
    c2 = synthetic_csv(str(tmp_path / "b.csv"), gamma=0.10)
    out = render(FigureSpec([c1, c2], str(tmp_path / "two.png"),
                            labels=["m=2", "m=0"]))
    assert os.path.getsize(out) > 10_000


def test_render_adaptivity_trace(tmp_path):
    csv = synthetic_csv(str(tmp_path / "run.csv"))
    out = render_adaptivity(csv, str(tmp_path / "adapt.png"))
    assert os.path.getsize(out) > 10_000


def test_missing_columns_listed(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,mass\n0.0,1.0\n")
    with pytest.raises(FormatError, match="missing CSV columns"):
        render(FigureSpec([str(p)], str(tmp_path / "x.png")))


def test_empty_csv_rejected(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(FormatError):
        read_run_csv(str(p))
    assert not (tmp_path / "y.png").exists()


def test_cli_entrypoint(tmp_path):
    csv = synthetic_csv(str(tmp_path / "run.csv"))
    out = tmp_path / "cli.png"
    proc = subprocess.run(
        [sys.executable, "-c",
         "import sys; from vp_plots.figures import main_landau; "
         "sys.exit(main_landau(sys.argv[1:]))",
         csv, "--output", str(out), "--gamma", "0.153"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists() and out.stat().st_size > 0


def test_density_from_solver_checkpoint(tmp_path):
    # cross-package integration through the documented checkpoint format
    vd = pytest.importorskip("vlasov_dlra")
    from vlasov_dlra.cli import save_checkpoint
    from vlasov_dlra.scenarios import landau_2d
    st = landau_2d(nx=4, nv=8, m=3, rank=3)
    ck = str(tmp_path / "s.ckpt")
    save_checkpoint(ck, st, 0.75)
    before = sha(ck)
    out = render_density(ck, str(tmp_path / "rho.png"))
    assert os.path.getsize(out) > 10_000
    assert sha(ck) == before

    # the element means must match the solver's own density moment
    from vp_plots.runio import element_mean_density, read_checkpoint
    rho, lower, sizes = element_mean_density(read_checkpoint(ck))
    from vlasov_dlra.poisson import compute_moments
    mom = compute_moments(st)
    sx = st.space_x
    means = mom.rho.data[:, 0] / np.prod(np.sqrt(sx.mesh.sizes), axis=1)
    np.testing.assert_allclose(rho, means, rtol=1e-10)
