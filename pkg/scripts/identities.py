"""Run the invariant suite and print one line per identity."""

from detangle.io import identity_checks

if __name__ == "__main__":
    for name, value, tol, ok in identity_checks(seed=0):
        print(f"{'PASS' if ok else 'FAIL'}  {name:18s} {value:.3e} (threshold {tol:g})")
