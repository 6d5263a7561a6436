"""Train neural models on one synthetic task and compare test errors with linear interpolation.

Defaults reproduce the desk-scale trend check (16^3 -> 32^3, T=8, 8 train /
2 unseen test geometries, 200 epochs).  ``--task prediction --target-dims 16
--models lofno`` gives the single-frame prediction check.
"""

import argparse
import logging

from lofno.experiments import compare


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--task", default="spatial_x2")
    p.add_argument("--target-dims", type=int, default=32)
    p.add_argument("--n-times", type=int, default=8)
    p.add_argument("--n-train", type=int, default=8)
    p.add_argument("--n-test", type=int, default=2)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--models", nargs="+", default=["lofno", "fno_edsr"])
    p.add_argument("--every", type=int, default=25, help="log the loss every N epochs")
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    def progress(kind, epoch, loss):
        if epoch % a.every == 0 or epoch == 1:
            print(f"{kind} epoch {epoch} loss {loss:.5g}", flush=True)

    r = compare(a.task, a.target_dims, a.n_times, a.n_train, a.n_test, a.epochs, tuple(a.models), progress)
    print(r["report"].to_table("err_u"))
    print(r["report"].to_table("err_wss"))
    for k, s in r["train_seconds"].items():
        print(f"{k} trained in {s:.0f}s")
    print(f"total {r['seconds']:.0f}s")


if __name__ == "__main__":
    main()
