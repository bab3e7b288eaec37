"""Quick end-to-end check of the Python bindings."""

import math
import tempfile

import gnss_regulator as gr


def main():
    with tempfile.TemporaryDirectory() as tmp:
        regions = gr.generate_dataset(tmp, seed=7, epochs_per_region=30)
        assert "soma" in regions, regions
        data = gr.load_dataset(tmp)
        assert list(data) == regions

        train = [e for r, eps in data.items() if r != "soma" for e in eps]
        test = data["soma"]
        epoch = test[0]
        assert len(epoch) == len(epoch.pseudoranges) >= 5

        line = epoch.to_json()
        again = gr.Epoch.from_json(line)
        assert again.pseudoranges == epoch.pseudoranges
        assert gr.Epoch.from_json(epoch.to_json(include_truth=False)).truth is None

        fix = gr.wls_solve(epoch)
        assert fix["converged"] and math.isfinite(fix["horizontal_error"])

        errors = epoch.truth_errors
        weights = gr.regulate_weights(epoch, errors)
        assert len(weights) == len(epoch)
        clean = gr.regulate_measurements(epoch, errors)
        assert gr.wls_solve(clean)["horizontal_error"] < 1e-3

        mask = gr.select_measurements([0.0, 2.0, -3.0, 40.0, 1.0, -60.0], n_req=4)
        assert mask == [True, True, True, False, True, False], mask
        assert gr.percentile([1.0, 2.0, 3.0, 4.0], 50) == 2.5

        model = gr.Model.train(train, iterations=20, seed=1, hidden=16, batch_size=8)
        path = f"{tmp}/model.json"
        model.save(path)
        loaded = gr.Model.load(path)
        assert loaded.predict(epoch) == model.predict(epoch)

        out = gr.localize(epoch, "regulate_weights", model=loaded, selector=True)
        assert out["status"] in ("converged", "non_convergence", "solver_failed")

        oracle = gr.evaluate(test, "regulate_measurements", oracle_errors=True)
        assert oracle["p95"] < 1e-2, oracle["p95"]
        base = gr.evaluate(test, "wls_unit")
        assert len(base["horizontal_errors"]) == len(test)

        try:
            gr.localize(epoch, "nonsense")
        except gr.ConfigError:
            pass
        else:
            raise AssertionError("expected ConfigError")
        try:
            gr.Epoch.from_json("not json")
        except gr.DataError:
            pass
        else:
            raise AssertionError("expected DataError")

    print("smoke test ok:", ", ".join(gr.METHODS))


if __name__ == "__main__":
    main()
