"""Training experiment with periodic tracking eval."""
import sys, os, numpy as np
sys.path.insert(0, '/root/pkg/src')
from cpgloco.config import RunConfig, parse_assignments
from cpgloco.runner import run_train, _eval_env, evaluate_tracking

cfg = parse_assignments(sys.argv[1:])
ev = _eval_env(cfg, n_envs=1)

def cb(update, policy, normalizer, row):
    if update % 250 == 0:
        m = evaluate_tracking(ev, policy, normalizer, command=(0.5,0.0,0.0), episodes=3)
        print(f"[eval u={update}] vx={m['mean_vx']:.3f} falls={m['falls']} duty={m['duty_ratio']:.2f} period={m['period']:.2f} | ret={row['return_mean']:.1f} lr={row['lr']:.1e}", flush=True)
    return False

res, ckpt = run_train(cfg, callback=cb)
m = evaluate_tracking(ev, res.policy, res.normalizer, command=(0.5,0.0,0.0), episodes=10)
print('FINAL:', m, flush=True)
print('ckpt:', ckpt)
