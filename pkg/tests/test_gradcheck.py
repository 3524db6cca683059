import numpy as np

from hedgedrl import autodiff as ad
from hedgedrl import cli, gradcheck


def test_every_registered_check_passes():
    ok, lines = gradcheck.summary(seeds=3)
    assert ok, "\n".join(lines)
    assert len(lines) == len(gradcheck.registry()) + 1


def test_composite_network_is_small():
    from hedgedrl.policy import init_params
    n = sum(v.size for v in init_params(gradcheck.COMPOSITE_NET, 0).arrays.values())
    assert 40 <= n <= 60


def test_broken_backward_rule_is_caught(monkeypatch, capsys):
    real = ad.relu

    def bad_relu(x):
        out = real(x)
        backward = out._backward

        def flipped(g):
            # wrong sign on the propagated gradient
            return tuple(-v if v is not None else None for v in backward(g))
        out._backward = flipped
        return out

    monkeypatch.setattr(ad, "relu", bad_relu)
    rel = gradcheck.run_checks(seeds=2, names=["relu"])["relu"]
    assert rel > gradcheck.TOLERANCE
    assert cli.main(["gradcheck", "--seeds", "2"]) != 0
    assert "FAIL" in capsys.readouterr().out
