# coding: utf-8

# # Image quality numbers
#
# PSNR, SSIM, RMSE, VIF and a histogram KL divergence are used to compare
# reconstructions against the ground truth. Here they are tried on a few
# simple distortions so their behaviour is easy to see.

# In[1]:

import numpy as np
from scipy import ndimage

from hpmr import data, metrics

gt = data.gen_phantom(seed=11, size=64).image
rng = np.random.default_rng(0)


# A constant offset of 0.1 on a [0, 1] image is exactly 20 dB.

# In[2]:

x = np.full((32, 32), 0.25)
print(metrics.psnr(x + 0.1, x), metrics.rmse(x + 0.1, x))


# Noise, blur and a contrast change.

# In[3]:

cases = {
    "identity": gt,
    "noise 0.02": np.clip(gt + 0.02 * rng.standard_normal(gt.shape), 0, 1),
    "noise 0.05": np.clip(gt + 0.05 * rng.standard_normal(gt.shape), 0, 1),
    "blur s=1": ndimage.gaussian_filter(gt, 1.0),
    "contrast 0.8": 0.8 * gt + 0.1,
}
print(f"{'case':14s} {'PSNR':>7s} {'SSIM':>7s} {'VIF':>7s} {'KL':>7s}")
for name, im in cases.items():
    e = metrics.evaluate_pair(im, gt)
    print(f"{name:14s} {e.psnr:7.2f} {e.ssim:7.4f} {e.vif:7.4f} {e.kl:7.4f}")


# KL compares intensity histograms only, so a pixel shuffle leaves it at zero
# while every spatial metric collapses.

# In[4]:

shuffled = rng.permutation(gt.ravel()).reshape(gt.shape)
e = metrics.evaluate_pair(shuffled, gt)
print("shuffled: KL", e.kl, " SSIM", round(e.ssim, 4), " VIF", round(e.vif, 4))


# Histogram moments of the reconstruction, in the report's format.

# In[5]:

print(metrics.hist_stats(gt))
