"""
Reading volumes and normalising intensities
===========================================

Two synthetic subjects with different scanner gains are written to NIfTI,
read back, histogram-matched to a shared reference and rescaled to 0..255.
Run with ``python3 demos/01_volumes_and_preprocessing.py``.
"""

import tempfile
from pathlib import Path

import numpy as np

from brainage.nifti import read_nifti, write_nifti
from brainage.pipeline.synth import sample_subject
from brainage.preprocess import build_reference_histogram, extract_center_slices, foreground, preprocess_volume

# two phantoms; sample_subject depends only on (seed, index)
subjects = [sample_subject(i, seed=11) for i in range(2)]
for age, vol in subjects:
    fg = foreground(vol)
    print(f"age {age:5.1f}  shape {vol.shape}  foreground median {np.median(fg):7.1f}")

# the writer and reader round-trip float32 data bit for bit
tmp = Path(tempfile.mkdtemp())
write_nifti(subjects[0][1], tmp / "sub-0000.nii")
back = read_nifti(tmp / "sub-0000.nii")
print("round trip exact:", back.data.tobytes() == subjects[0][1].data.tobytes())

# a reference quantile table built from both volumes (the demo is small, so q is too)
table = build_reference_histogram([v for _, v in subjects], q=100)
print(f"reference: {len(table)} levels from {table.values[0]:.1f} to {table.values[-1]:.1f}")

# after matching and min-max scaling the two foregrounds line up
for age, vol in subjects:
    out = preprocess_volume(vol, table)
    print(f"age {age:5.1f}  range [{out.data.min():.0f}, {out.data.max():.0f}]  foreground median {np.median(foreground(out)):6.1f}")

# the 2D pipeline looks at the 40 centre axial slices
slices = extract_center_slices(preprocess_volume(subjects[0][1], table), 40)
print(f"{len(slices)} slices, indices {slices[0].source_index}..{slices[-1].source_index}, each {slices[0].data.shape}")
