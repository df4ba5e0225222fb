import sys, time
from ficm import *
from ficm.trainer import train, NullSinks

class WatchSinks(NullSinks):
    def __init__(self):
        self.recent = []
        self.t0 = time.time()
        self.n = 0
    def on_episode(self, rec):
        self.recent.append(rec)
        self.n += 1
        if self.n % 50 == 0:
            last = self.recent[-100:]
            sr = sum(r.success for r in last) / len(last)
            mri = sum(r.mean_intrinsic for r in last) / len(last)
            print(f"ep {self.n} env_steps {rec.env_steps} success100 {sr:.2f} mean_ri {mri:.4g} elapsed {time.time()-self.t0:.0f}s", flush=True)

cfg = ExperimentConfig(
    env=EnvConfig(layout_seed=0, spawn_setting='sparse'),
    train=TrainConfig(workers=8, n_step=20, total_env_steps=400_000, seed=1,
                      early_stop_success=0.8,
                      curiosity=CuriosityConfig(module_kind='ficm-s', zeta=0.1)),
)
stats = train(cfg, WatchSinks())
print('DONE', stats)
