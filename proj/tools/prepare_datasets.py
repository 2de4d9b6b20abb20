#!/usr/bin/env python3
"""Convert the raw Iris and German Credit files into CSV + schema pairs.

Iris comes from the copy bundled with scikit-learn (header line
"150,4,setosa,versicolor,virginica"). German Credit comes from the original
UCI Statlog file `german.data` (20 attributes, A-codes). It is re-encoded
into 24 numeric/categorical columns: ordinal A-codes become integers,
nominal A-codes stay categorical, and `purpose` is expanded into five
indicator columns.

Usage: tools/prepare_datasets.py [data_dir]
"""

import csv
import json
import os
import sys

DATA = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data")


def write(name, header, rows, schema):
    with open(os.path.join(DATA, name + ".csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    with open(os.path.join(DATA, name + ".schema.json"), "w") as f:
        json.dump(schema, f, indent=2)
        f.write("\n")


def iris():
    with open(os.path.join(DATA, "raw", "iris.csv")) as f:
        lines = f.read().strip().splitlines()
    classes = lines[0].split(",")[2:]
    names = ["sepal_length", "sepal_width", "petal_length", "petal_width"]
    bounds = [(4.0, 8.0), (2.0, 4.5), (1.0, 7.0), (0.0, 2.5)]
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        rows.append(parts[:4] + [classes[int(parts[4])]])
    schema = {
        "label_column": "species",
        "classes": classes,
        "features": [
            {"name": n, "kind": "continuous", "lower": lo, "upper": hi}
            for n, (lo, hi) in zip(names, bounds)
        ],
    }
    write("iris", names + ["species"], rows, schema)


def ordinal(prefix, first):
    return lambda code: str(int(code[len(prefix):]) - first)


def german():
    integer = lambda name, lo, hi: {"name": name, "kind": "integer", "lower": lo, "upper": hi}
    categorical = lambda name, cats: {"name": name, "kind": "categorical", "categories": cats}
    # (schema entry, raw attribute index, converter)
    spec = [
        (integer("checking_status", 1, 4), 0, lambda c: str(int(c[1:]) - 10)),
        (integer("duration_months", 4, 72), 1, str),
        (integer("credit_history", 0, 4), 2, lambda c: str(int(c[1:]) - 30)),
        (integer("credit_amount", 250, 20000), 4, str),
        (integer("savings", 1, 5), 5, lambda c: str(int(c[1:]) - 60)),
        (integer("employment_since", 1, 5), 6, lambda c: str(int(c[1:]) - 70)),
        (integer("installment_rate", 1, 4), 7, str),
        (categorical("personal_status", ["A91", "A92", "A93", "A94", "A95"]), 8, str),
        (categorical("other_debtors", ["A101", "A102", "A103"]), 9, str),
        (integer("residence_since", 1, 4), 10, str),
        (categorical("property", ["A121", "A122", "A123", "A124"]), 11, str),
        (integer("age_years", 18, 80), 12, str),
        (categorical("other_installment_plans", ["A141", "A142", "A143"]), 13, str),
        (categorical("housing", ["A151", "A152", "A153"]), 14, str),
        (integer("existing_credits", 1, 4), 15, str),
        (categorical("job", ["A171", "A172", "A173", "A174"]), 16, str),
        (integer("dependents", 1, 2), 17, str),
        (categorical("telephone", ["A191", "A192"]), 18, str),
        (categorical("foreign_worker", ["A201", "A202"]), 19, str),
    ]
    purposes = [("purpose_new_car", "A40"), ("purpose_used_car", "A41"),
                ("purpose_furniture", "A42"), ("purpose_radio_tv", "A43"),
                ("purpose_business", "A49")]
    features = [s for s, _, _ in spec] + [integer(n, 0, 1) for n, _ in purposes]
    rows = []
    with open(os.path.join(DATA, "raw", "german.data")) as f:
        for line in f:
            a = line.split()
            row = [conv(a[idx]) for _, idx, conv in spec]
            row += ["1" if a[3] == code else "0" for _, code in purposes]
            row.append("good" if a[20] == "1" else "bad")
            rows.append(row)
    schema = {"label_column": "credit_risk", "classes": ["good", "bad"], "features": features}
    write("german_credit", [f["name"] for f in features] + ["credit_risk"], rows, schema)


if __name__ == "__main__":
    iris()
    german()
