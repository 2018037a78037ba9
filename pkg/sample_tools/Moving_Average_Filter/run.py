"""Moving_Average_Filter entry point: request.json -> response.json."""
import json
import sys


def main() -> None:
    with open(sys.argv[1]) as fh:
        request = json.load(fh)
    series = [float(v) for v in request["series"]]
    window = int(request.get("window", 3))
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    half = window // 2
    smoothed = []
    for i in range(len(series)):
        lo = max(0, i - half)
        hi = min(len(series), i + half + 1)
        smoothed.append(sum(series[lo:hi]) / (hi - lo))
    with open(sys.argv[2], "w") as fh:
        json.dump({"smoothed": smoothed}, fh)


if __name__ == "__main__":
    main()
