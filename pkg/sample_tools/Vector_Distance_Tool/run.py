"""Vector_Distance_Tool entry point: request.json -> response.json."""
import json
import math
import sys


def main() -> None:
    with open(sys.argv[1]) as fh:
        request = json.load(fh)
    a = [float(v) for v in request["a"]]
    b = [float(v) for v in request["b"]]
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    euclidean = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(y * y for y in b))
    cosine = 0.0
    if norm_a and norm_b:
        cosine = sum(x * y for x, y in zip(a, b)) / (norm_a * norm_b)
    with open(sys.argv[2], "w") as fh:
        json.dump(
            {"euclidean": euclidean, "cosine": cosine, "agreement": 1.0 / (1.0 + euclidean)}, fh
        )


if __name__ == "__main__":
    main()
