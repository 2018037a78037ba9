"""Series_Normalizer entry point: request.json -> response.json."""
import json
import sys


def main() -> None:
    with open(sys.argv[1]) as fh:
        request = json.load(fh)
    series = [float(v) for v in request["series"]]
    scale = max((abs(v) for v in series), default=0.0)
    normalized = [v / scale for v in series] if scale else list(series)
    with open(sys.argv[2], "w") as fh:
        json.dump({"normalized": normalized, "scale": scale}, fh)


if __name__ == "__main__":
    main()
