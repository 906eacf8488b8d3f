#!/usr/bin/env python3
"""Writes the synthetic loan-approval fixture used by tests and examples.

Columns follow the public loan prediction dataset; values are generated from a
fixed seed so the file is reproducible.
"""
import random
import sys

COLUMNS = [
    "gender", "married", "dependents", "education", "self_employed",
    "applicant_income", "coapplicant_income", "loan_amount",
    "loan_amount_term", "credit_history", "property_area", "loan_status",
]


def main(path, rows=600, seed=7):
    rng = random.Random(seed)
    with open(path, "w", encoding="utf-8") as out:
        out.write(",".join(COLUMNS) + "\n")
        for _ in range(rows):
            gender = rng.choice(["Male", "Male", "Female"])
            married = rng.choice(["Yes", "No"])
            dependents = rng.choice([0, 0, 1, 2, 3])
            education = rng.choice(["Graduate", "Graduate", "Not Graduate"])
            self_employed = rng.choice(["No", "No", "No", "Yes"])
            income = int(rng.lognormvariate(8.4, 0.5))
            coincome = 0 if rng.random() < 0.45 else int(rng.lognormvariate(7.3, 0.6))
            loan = max(20, int(rng.gauss(140, 45)))
            term = rng.choice([360, 360, 360, 180, 480])
            credit = 1 if rng.random() < 0.8 else 0
            area = rng.choice(["Urban", "Rural", "Semiurban"])
            ratio = (income + coincome) / loan
            score = 2.5 * credit + 0.08 * (ratio - 40) + (0.3 if area == "Semiurban" else 0.0)
            approve = score > 1.5
            if rng.random() < 0.06:
                approve = not approve
            status = "approve" if approve else "deny"
            out.write(",".join(str(v) for v in [
                gender, married, dependents, education, self_employed, income,
                coincome, loan, term, credit, area, status]) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "loan.csv")
