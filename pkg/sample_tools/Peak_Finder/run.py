"""Peak_Finder entry point: request.json -> response.json."""
import json
import sys


def main() -> None:
    with open(sys.argv[1]) as fh:
        request = json.load(fh)
    series = [float(v) for v in request["series"]]
    threshold = float(request.get("threshold", 0.0))
    indices = [
        i
        for i in range(1, len(series) - 1)
        if series[i] > series[i - 1] and series[i] > series[i + 1] and series[i] >= threshold
    ]
    with open(sys.argv[2], "w") as fh:
        json.dump({"indices": indices, "values": [series[i] for i in indices]}, fh)


if __name__ == "__main__":
    main()
