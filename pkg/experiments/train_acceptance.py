"""Train one acceptance artifact by key (full|med|min|nocontact seeds)."""
import sys, os
sys.path.insert(0, '/root/pkg/src')
sys.path.insert(0, '/root/pkg/tests')
os.chdir('/root/pkg')
from test_acceptance import ensure_trained

key = sys.argv[1]
if key.startswith("min_nocontact"):
    seed = key.split("_")[-1]
    cfg, ckpt = ensure_trained(key, extra=["task=fixed", "obs_mode=min_nocontact",
                                           f"seed={seed}"], updates=3000)
else:
    bands = {"full": (0.45, 0.55), "med": (0.45, 0.55), "min": (0.40, 0.55)}
    cfg, ckpt = ensure_trained(key, stop_band=bands[key])
print("done:", ckpt, flush=True)
