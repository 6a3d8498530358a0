"""Session-wide lab of desk-scale federation runs.

Federation at the desk profile costs about 17 s per run, so corpora,
pretrained checkpoints, and run histories are cached once per session and
shared across tests. Every cached artifact is produced through the CLI,
so the cache also exercises the shipped pipeline end to end.
"""

import pytest

from fedlm.cli import main as cli_main
from fedlm.server import read_metrics

DESK_ROUNDS = 200


class DeskLab:
    def __init__(self, root):
        self.root = root
        self._data_ready = set()
        self._runs = {}

    def data_dir(self, seed):
        out = self.root / f"seed{seed}"
        if seed not in self._data_ready:
            assert cli_main(["gen-data", "--out-dir", str(out), "--seed", str(seed)]) == 0
            assert cli_main(["pretrain", "--out-dir", str(out), "--seed", str(seed)]) == 0
            self._data_ready.add(seed)
        return out

    def run(self, seed, loss="all", scratch=False, z=None, rounds=DESK_ROUNDS,
            workers=1, eval_every=100, fresh_suffix=""):
        """(history, metrics path, checkpoint path) for one federation run."""
        key = (seed, loss, scratch, z, rounds, workers, eval_every, fresh_suffix)
        if key in self._runs:
            return self._runs[key]
        out = self.data_dir(seed)
        tag = (f"{loss.replace(':', '-')}_{'scratch' if scratch else 'pre'}"
               f"_z{z}_r{rounds}_w{workers}_e{eval_every}{fresh_suffix}")
        metrics = out / f"m_{tag}.txt"
        ckpt = out / f"ckpt_{tag}.ckpt"
        argv = [
            "federate", "--out-dir", str(out), "--seed", str(seed),
            "--loss", loss, "--rounds", str(rounds),
            "--eval-every", str(eval_every), "--workers", str(workers),
            "--metrics-out", str(metrics),
            "--checkpoint-out", str(ckpt),
        ]
        if scratch:
            argv.append("--no-pretrain")
        if z is not None:
            argv += ["--dp", "--noise-multiplier", str(z)]
        assert cli_main(argv) == 0
        result = (read_metrics(metrics), metrics, ckpt)
        self._runs[key] = result
        return result

    def final_ppl(self, seed, **kw):
        return self.run(seed, **kw)[0][-1].heldout_ppl

    def pretrained_ppl(self, seed):
        """Held-out PPL of the pretrained checkpoint before any adaptation."""
        return self.run(seed)[0][0].heldout_ppl


@pytest.fixture(scope="session")
def lab(tmp_path_factory):
    return DeskLab(tmp_path_factory.mktemp("desk"))
