"""Parallel pumping in the rotating frame: asymptotic state with and without disentanglement."""

from dataclasses import dataclass
from pathlib import Path

from detangle import engine as E
from detangle import experiments as X
from detangle import io as dio


@dataclass
class Config:
    g_h: float = 5.0
    g_d: float = 100.0
    theta_t: float = 10.0
    ratio: float = 1.05
    t_end: float = 20.0
    window: float = 5.0
    variant: str = "gradient"
    out: str = "results/parallel_pump"


def main(cfg: Config = Config()):
    for label, g_d in (("no_disentanglement", 0.0), ("disentanglement", cfg.g_d)):
        params = E.EvolutionParams(cfg.g_h, g_d, cfg.theta_t)
        tr = X.pump_trajectory(cfg.ratio, params, cfg.t_end, variant=cfg.variant)
        res = E.classify_asymptotics(tr, params, window=cfg.window)
        dio.write_files(dio.emit_plot_data(tr, "pump"), Path(cfg.out) / label)
        print(f"g_d = {g_d:g}: {res.kind}, period {res.period}, final Bloch sum {tr.total_bloch[-1].round(4)}")


if __name__ == "__main__":
    main()
