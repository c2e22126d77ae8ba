"""Published ICBHI split counts and Mixed-ICBHI synthetic ratios."""

COLUMNS = (500, 800, 1000, 1500, 2000, 3000, 5000)

TRAIN_COUNTS = {"normal": 2063, "crackle": 1215, "wheeze": 501, "both": 363}
TEST_COUNTS = {"normal": 1579, "crackle": 649, "wheeze": 385, "both": 143}
TOTALS = {"train": 4142, "test": 2756}
TRAIN_SHARE = {"normal": 49.8, "crackle": 29.3, "wheeze": 12.1, "both": 8.8}
TEST_SHARE = {"normal": 57.29, "crackle": 23.55, "wheeze": 13.97, "both": 5.19}

PRINTED_RATIOS = {
    "normal": [0, 0, 0, 0, 0, 31.23, 58.74],
    "crackle": [0, 0, 0, 19.00, 41.11, 59.50, 75.70],
    "wheeze": [0, 37.38, 49.90, 66.60, 75.72, 83.30, 89.98],
    "both": [27.40, 54.63, 63.70, 75.80, 82.40, 87.90, 92.74],
}

# The printed Mixed-2k abnormal cells disagree with the real-priority policy
# applied to the counts above; these are the policy values.
MIXED_2K_POLICY = {"crackle": 39.25, "wheeze": 74.95, "both": 81.85}


def official_manifest():
    """Placeholder records with the official per-class split sizes."""
    from respiro.corpus import SampleRecord

    records = []
    for split, counts in (("train", TRAIN_COUNTS), ("test", TEST_COUNTS)):
        for label, n in counts.items():
            records.extend(SampleRecord(f"{split}-{label}-{i:05d}", f"{label}/{i}.wav", label, split)
                           for i in range(n))
    return records
