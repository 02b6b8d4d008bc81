"""Effective free energy on the pure class and the critical disentanglement ratio versus J/B."""

from dataclasses import dataclass

import numpy as np

from detangle import experiments as X
from detangle import io as dio


@dataclass
class Config:
    J_over_B: float = 1.0
    ratio_max: float = 0.6
    ratio_step: float = 0.005
    s_points: int = 721
    variant: str = "gradient"
    # critical-ratio curve
    j_values: tuple = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0)
    out: str = "results/landscape"


def main(cfg: Config = Config()):
    ratios = np.round(np.arange(0, cfg.ratio_max + cfg.ratio_step / 2, cfg.ratio_step), 10)
    res = X.run_landscape(cfg.J_over_B, ratios, cfg.s_points, variant=cfg.variant)
    dio.write_files(dio.emit_plot_data(res, "landscape"), cfg.out)
    dio.write_results(zip(res.ratios, res.minima), dio.MINIMA_SCHEMA, f"{cfg.out}/minima.csv")
    print(f"J/B = {cfg.J_over_B}: critical ratio {res.critical_ratio} ({res.status})")
    curve = [(j, X.critical_ratio(0.0, 5.0, j, variant=cfg.variant)) for j in cfg.j_values]
    dio.write_results(curve, ("J_over_B", "critical_ratio"), f"{cfg.out}/critical_curve.csv")
    for j, c in curve:
        print(f"  J/B = {j:4.2f}  critical ratio {c:.6f}")


if __name__ == "__main__":
    main()
