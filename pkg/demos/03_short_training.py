# coding: utf-8

# # A short training run
#
# The generator starts as the identity (every U-net output conv is zero), so
# at step 0 it reproduces the LR input. A few epochs on a small phantom set
# are enough to see the reconstruction move away from LR. The full-size
# recipe is 200 phantoms and 50 epochs; this one takes a few minutes on a CPU.

# In[1]:

import time

import numpy as np
import torch

from hpmr import data, kspace, metrics, training

torch.set_num_threads(1)
man = data.phantom_manifest(48, ratio=0.75, seed=0)
train = data.load_split(man, "train")
test = data.load_split(man, "test")
print(train.shape, test.shape)


# In[2]:

cfg = training.TrainConfig(epochs=4, batch_size=8, mask_rate=0.5, seed=0).validate()
state = training.init_state(cfg)
m = kspace.make_mask(64, 64, cfg.mask_rate)
lr_test = np.stack([kspace.degrade(x, m) for x in test])

def mean_psnr(imgs):
    return np.mean([metrics.psnr(np.clip(a, 0, 1), b) for a, b in zip(imgs, test)])

print("LR          ", mean_psnr(lr_test))
print("G at step 0 ", mean_psnr(training.reconstruct(state.generator, lr_test)))


# Train. Each step updates D once, then G once with D frozen.

# In[3]:

t = time.time()
state = training.fit(train, state=state)
print(f"{state.step} steps in {time.time() - t:.0f} s")
for b in state.history[::4]:
    print(f"adv_g {b.adv_g:.3f}  adv_d {b.adv_d:.3f}  fre {b.fre:.5f}  img {b.img:.5f}")


# In[4]:

print("LR   ", mean_psnr(lr_test))
print("HPMR ", mean_psnr(training.reconstruct(state.generator, lr_test)))


# Checkpoints are one self-verifying file; loading restores everything,
# optimiser moments included.

# In[5]:

import os, tempfile

path = os.path.join(tempfile.mkdtemp(), "demo.ckpt")
training.save_checkpoint(state, path)
again = training.load_checkpoint(path)
print(os.path.getsize(path) // 2 ** 20, "MiB,", "step", again.step)
print(all(torch.equal(p, q) for p, q in zip(state.generator.parameters(),
                                            again.generator.parameters())))
