"""Reference per-class Dice columns from a 13-organ abdominal CT benchmark, used as metric oracles."""

CLASSES = (
    "Liver", "Stomach", "Spleen", "R kidney", "L kidney", "Aorta", "IVC",
    "Pancreas", "Veins", "Gallbladder", "Oesophagus", "R Adrenal", "L Adrenal",
)

UNETR = (0.959, 0.779, 0.916, 0.932, 0.932, 0.873, 0.797, 0.738, 0.669, 0.590, 0.675, 0.634, 0.615)
UNETR_TCF = (0.959, 0.814, 0.925, 0.935, 0.928, 0.865, 0.792, 0.735, 0.680, 0.617, 0.704, 0.661, 0.622)
UNETR_PCF = (0.939, 0.748, 0.916, 0.935, 0.931, 0.870, 0.775, 0.698, 0.688, 0.547, 0.713, 0.631, 0.558)
UNETR_CBS = (0.952, 0.784, 0.917, 0.932, 0.923, 0.863, 0.804, 0.745, 0.680, 0.718, 0.707, 0.644, 0.629)

# printed column means
MEAN_UNETR = 0.777
MEAN_CBS = 0.792

# classes marked as poorly performing in the UNETR column (1-based ids)
UNETR_STARRED = {2, 7, 8, 9, 10, 11, 12, 13}
