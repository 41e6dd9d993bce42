# coding: utf-8

# # Truncating k-space
#
# A scanner measures the 2-D Fourier transform of the image. Keeping only a
# centred band of columns and zero-filling the rest gives the low-resolution
# ("LR") image that the generator later learns to sharpen. This script walks
# through that degradation on a synthetic phantom.

# In[1]:

import numpy as np

from hpmr import data, kspace

ph = data.gen_phantom(seed=3, size=64)
img = ph.image
print(img.shape, img.min(), img.max())


# The transform is unitary, so energy is the same in both domains.

# In[2]:

ks = kspace.fft2(img)
print("image energy  ", np.sum(img ** 2))
print("k-space energy", np.sum(np.abs(ks) ** 2))
print("round trip err", np.max(np.abs(kspace.ifft2_complex(ks) - img)))


# After the shift the DC term sits at column W//2. A constant image has nothing else.

# In[3]:

flat = kspace.fft2(np.full((8, 8), 0.5))
print(np.round(np.abs(flat), 6))


# Masks keep whole columns. At rate 0.5 half the columns survive, at 0.25 a quarter.

# In[4]:

for rate in (1.0, 0.5, 0.25):
    m = kspace.make_mask(64, 64, rate)
    cols = m.columns
    print(f"rate {rate:<5} keeps {len(cols):2d} columns, {cols[0]}..{cols[-1]}")


# Degrading: mask, inverse transform, magnitude.

# In[5]:

from hpmr import metrics

for rate in (0.5, 0.25):
    lr = kspace.degrade(img, kspace.make_mask(64, 64, rate))
    print(f"rate {rate}: PSNR {metrics.psnr(np.clip(lr, 0, 1), img):.2f} dB, "
          f"SSIM {metrics.ssim(np.clip(lr, 0, 1), img):.4f}")


# Ringing runs horizontally only, since only columns were dropped. Compare
# total variation along each axis.

# In[6]:

lr = kspace.degrade(img, kspace.make_mask(64, 64, 0.25))
err = lr - img
print("row-wise  |d err|", np.abs(np.diff(err, axis=1)).mean())
print("col-wise  |d err|", np.abs(np.diff(err, axis=0)).mean())


# Write the pair out for a look (8-bit PNG).

# In[7]:

import tempfile, os

out = tempfile.mkdtemp()
data.save_image(img, os.path.join(out, "hr.png"))
data.save_image(np.clip(lr, 0, 1), os.path.join(out, "lr_4x.png"))
print(sorted(os.listdir(out)), "in", out)
