"""Wall-time profile of one training epoch across model sizes.

    python3 scripts/profile_training.py --dims 32 64 128
"""

import argparse
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from sdvsum.datasets import SynthSpec, generate_synthetic
from sdvsum.model import ModelConfig, parameter_count
from sdvsum.training import TrainConfig, train_run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--videos", type=int, default=20)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    print(f"{'dim':>5} {'params':>9} {'gen s':>7} {'epoch s':>8} {'loss':>8}")
    for dim in args.dims:
        spec = SynthSpec(dim=dim, videos_train=args.videos,
                         videos_validation=max(2, args.videos // 4),
                         videos_test=2, seed=args.seed)
        with tempfile.TemporaryDirectory(prefix="profile_") as tmp:
            t0 = time.monotonic()
            manifest = generate_synthetic(spec, Path(tmp) / "data")
            gen_s = time.monotonic() - t0
            model_config = ModelConfig(dim=dim)
            train_config = TrainConfig(learning_rate=1e-3, epochs=1,
                                       seed=args.seed)
            t1 = time.monotonic()
            report = train_run(manifest, model_config, train_config,
                               Path(tmp) / "run")
            epoch_s = time.monotonic() - t1
            print(f"{dim:>5} {parameter_count(model_config):>9} {gen_s:>7.1f} "
                  f"{epoch_s:>8.1f} {report.epochs[0].train_loss:>8.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
