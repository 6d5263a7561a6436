"""Overfit smoke: tiny LoFNO on two synthetic samples for 500 epochs."""

import argparse

from lofno.experiments import overfit_smoke


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    r = overfit_smoke(a.epochs, a.seed)
    print(f"loss {r['first']:.5g} -> {r['last']:.5g} (best {r['best']:.5g}, ratio {r['ratio']:.4f}) in {r['seconds']:.0f}s")


if __name__ == "__main__":
    main()
