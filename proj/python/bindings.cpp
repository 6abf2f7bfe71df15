// Python bindings. Structured values cross the boundary as JSON text (the
// same documents the store and the API use); the Python package decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fedshadow/advisory.hpp"
#include "fedshadow/errors.hpp"
#include "fedshadow/federation.hpp"
#include "fedshadow/scenarios.hpp"
#include "fedshadow/serialization.hpp"
#include "fedshadow/signature.hpp"
#include "fedshadow/store.hpp"

namespace py = pybind11;
using namespace fedshadow;

namespace {

json parse(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
}

std::vector<SignatureRound> signatures_from(const json& doc) {
    std::vector<SignatureRound> out;
    for (const auto& s : doc) out.push_back(signature_from_json(s));
    return out;
}

json signatures_to(const std::vector<SignatureRound>& signatures) {
    json out = json::array();
    for (const auto& s : signatures) out.push_back(signature_to_json(s));
    return out;
}

std::string run_json(const std::string& config_text, std::size_t threads) {
    const FederationConfig config = config_from_json(parse(config_text));
    RunOptions options;
    options.threads = threads;
    RunRecord run;
    {
        py::gil_scoped_release release;
        run = run_federation(config, options);
    }
    return run_to_json(run).dump();
}

std::string simulate_to_store(const std::string& config_text, const std::string& root, const std::string& run_id,
                              std::size_t threads) {
    const FederationConfig config = config_from_json(parse(config_text));
    RunStore store(root);
    const std::string id = run_id.empty() ? new_run_id() : run_id;
    {
        py::gil_scoped_release release;
        store.create_run(id, config);
        store.save_status(id, RunStatus::running);
        RunOptions options;
        options.threads = threads;
        options.run_id = id;
        options.on_round = [&](const RoundRecord& round) { store.save_round(id, round); };
        store.finish_run(run_federation(config, options));
    }
    return id;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "fedshadow core: federation simulator, update-signature analytics and advisory";

    auto base = py::register_exception<Error>(m, "FedshadowError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<AnalysisError>(m, "AnalysisError", base.ptr());
    py::register_exception<StorageError>(m, "StorageError", base.ptr());
    py::register_exception<NotFoundError>(m, "NotFoundError", base.ptr());
    py::register_exception<LoadError>(m, "LoadError", base.ptr());

    m.def("default_config", [] { return config_to_json(FederationConfig{}).dump(); });

    m.def("validate_config", [](const std::string& text) {
        std::vector<std::pair<std::string, std::string>> out;
        try {
            config_from_json(parse(text));
        } catch (const ConfigError& e) {
            for (const auto& f : e.fields()) out.emplace_back(f.field, f.message);
            if (e.fields().empty()) out.emplace_back("", e.what());
        }
        return out;
    });

    m.def("scenarios", [] {
        json out = json::array();
        for (const auto& s : scenario_catalog())
            out.push_back({{"name", s.name}, {"description", s.description}, {"config", config_to_json(s.config)}});
        return out.dump();
    });

    m.def("run_federation", &run_json, py::arg("config"), py::arg("threads") = 1,
          "Runs a federation in memory and returns the run document as JSON text.");

    m.def("simulate_to_store", &simulate_to_store, py::arg("config"), py::arg("root"), py::arg("run_id") = "",
          py::arg("threads") = 1, "Runs a federation into a run store; returns the run id.");

    m.def("load_run", [](const std::string& root, const std::string& run_id) {
        const StoredRun stored = RunStore(root).load_run(run_id);
        json out = {{"run", run_to_json(stored.run)}, {"created_at", stored.created_at}};
        out["signatures"] = stored.signatures ? signatures_to(*stored.signatures) : json(nullptr);
        out["trajectory"] = stored.trajectory ? trajectory_to_json(*stored.trajectory) : json(nullptr);
        out["advisory"] = stored.advisory ? *stored.advisory : json(nullptr);
        return out.dump();
    });

    m.def("list_runs", [](const std::string& root) {
        json out = json::array();
        for (const auto& s : RunStore(root).list_runs()) {
            out.push_back({{"run_id", s.run_id},
                           {"status", to_string(s.status)},
                           {"created_at", s.created_at},
                           {"completed_rounds", s.completed_rounds},
                           {"config_summary", config_summary(s.config)}});
        }
        return out.dump();
    });

    m.def("analyze_run", [](const std::string& run_text) {
        const RunRecord run = run_from_json(parse(run_text));
        const RunAnalysis analysis = analyze_run(run);
        return json{{"signatures", signatures_to(analysis.signatures)},
                    {"trajectory", trajectory_to_json(analysis.trajectory)}}
            .dump();
    });

    m.def(
        "advise",
        [](const std::string& run_text, const std::string& signatures_text, double f1_drop, double signature_fraction,
           double separability_gate) {
            AdvisoryThresholds t;
            t.f1_drop = f1_drop;
            t.signature_fraction = signature_fraction;
            t.separability_gate = separability_gate;
            const RunRecord run = run_from_json(parse(run_text));
            const auto signatures = signatures_from(parse(signatures_text));
            const AdvisoryReport report = advise(run, signatures, t);
            return py::make_tuple(report_to_json(report).dump(), render_text(report));
        },
        py::arg("run"), py::arg("signatures"), py::arg("f1_drop") = 0.15, py::arg("signature_fraction") = 0.5,
        py::arg("separability_gate") = 0.5);

    m.def(
        "pca_project",
        [](const std::vector<std::vector<double>>& vectors, std::size_t n_components) {
            const PcaResult r = pca_project(vectors, n_components);
            std::vector<std::array<double, 3>> projections(r.projections.begin(), r.projections.end());
            return py::make_tuple(projections, r.components,
                                  std::array<double, 3>{r.explained_variance[0], r.explained_variance[1],
                                                        r.explained_variance[2]});
        },
        py::arg("vectors"), py::arg("n_components") = 3);

    m.def("separability_score", [](const std::vector<Point3>& points, const std::vector<bool>& flags) {
        return separability_score(points, flags);
    });

    m.def("density_ratio", [](const std::vector<Point3>& points, const std::vector<bool>& flags) {
        return density_ratio(points, flags);
    });

    m.def("params_digest", [](const std::string& params_text) {
        return params_digest(params_from_json(parse(params_text)));
    });
}
