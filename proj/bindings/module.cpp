#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "unlab/attacks.hpp"
#include "unlab/errors.hpp"
#include "unlab/harness.hpp"
#include "unlab/metrics.hpp"
#include "unlab/objectives.hpp"
#include "unlab/serialize.hpp"

namespace py = pybind11;
using namespace unlab;

namespace {

Batch to_objective_batch(const std::vector<std::pair<TokenSeq, TokenSeq>>& items) {
    Batch b;
    for (const auto& [q, a] : items) b.push_back({q, a});
    return b;
}

std::vector<PairedBatch> to_paired(
    const std::vector<std::tuple<int, std::vector<std::pair<TokenSeq, TokenSeq>>,
                                 std::vector<std::pair<TokenSeq, TokenSeq>>>>& subjects) {
    std::vector<PairedBatch> out;
    for (const auto& [sid, f, r] : subjects) {
        PairedBatch pb;
        pb.subject_id = sid;
        pb.forget_items = to_objective_batch(f);
        pb.retain_items = to_objective_batch(r);
        out.push_back(std::move(pb));
    }
    return out;
}

py::dict report_to_dict(const EvalReport& rep) {
    py::dict cells;
    const char* split_names[] = {"forget", "retain"};
    for (int sp = 0; sp < 2; ++sp) {
        py::dict by_task;
        for (Task task : {Task::classification, Task::generation, Task::cloze}) {
            py::dict by_channel;
            for (Channel ch : {Channel::identity, Channel::text}) {
                const auto& c = rep.cell(sp, task, ch);
                by_channel[to_string(ch)] = c ? py::object(py::float_(*c)) : py::none();
            }
            by_task[to_string(task)] = by_channel;
        }
        cells[split_names[sp]] = by_task;
    }
    py::dict d;
    d["method"] = rep.method_id;
    d["config_hash"] = rep.config_hash;
    d["cells"] = cells;
    d["forget_efficiency"] =
        rep.forget_efficiency ? py::object(py::float_(*rep.forget_efficiency)) : py::none();
    d["utility"] = rep.utility ? py::object(py::float_(*rep.utility)) : py::none();
    return d;
}

}  // namespace

PYBIND11_MODULE(_unlab, m) {
    m.doc() = "Desk-scale machine-unlearning laboratory: synthetic persona world, tiny "
              "autoregressive model, unlearning objectives, metrics and attacks.";

    py::register_exception<ConfigError>(m, "ConfigError");

    // ---- metrics ----
    m.def("rouge_l_recall", &rouge_l_recall, py::arg("reference"), py::arg("hypothesis"));
    m.def("token_f1", &token_f1, py::arg("reference"), py::arg("hypothesis"));
    m.def(
        "attack_success_rate",
        [](double r_before, double r_attack) -> py::object {
            const auto v = asr(r_before, r_attack);
            return v ? py::object(py::float_(*v)) : py::none();
        },
        py::arg("r_before"), py::arg("r_attack"));

    // ---- world ----
    py::class_<WorldConfig>(m, "WorldConfig")
        .def(py::init<>())
        .def_readwrite("n_subjects", &WorldConfig::n_subjects)
        .def_readwrite("facts_per_category", &WorldConfig::facts_per_category)
        .def_readwrite("vocab_size", &WorldConfig::vocab_size)
        .def_readwrite("seed", &WorldConfig::seed);

    py::class_<Sample>(m, "Sample")
        .def_readonly("id", &Sample::id)
        .def_readonly("subject_id", &Sample::subject_id)
        .def_readonly("fact_slot", &Sample::fact_slot)
        .def_property_readonly("channel", [](const Sample& s) { return to_string(s.channel); })
        .def_property_readonly("task", [](const Sample& s) { return to_string(s.task); })
        .def_readonly("question", &Sample::question)
        .def_readonly("reference", &Sample::reference)
        .def_readonly("options", &Sample::options)
        .def_readonly("correct_option", &Sample::correct_option);

    py::class_<World>(m, "World")
        .def_property_readonly("n_subjects",
                               [](const World& w) { return w.subjects.size(); })
        .def_property_readonly("fact_count", [](const World& w) { return w.fact_count(); })
        .def("subject_group", [](const World& w, int id) { return w.subject(id).group; })
        .def("identity_tokens",
             [](const World& w, int id) { return w.subject(id).identity_tokens; })
        .def("render_tokens",
             [](const World& w, const TokenSeq& t) { return render_tokens(w, t); });

    m.def("generate_world", &generate_world, py::arg("config"));
    m.def("build_samples", &build_samples, py::arg("world"));
    m.def("select_personalized", &select_personalized, py::arg("world"), py::arg("n_agents") = 3,
          py::arg("seed") = 0);

    py::class_<SplitSpec>(m, "SplitSpec")
        .def_readonly("forget_sample_ids", &SplitSpec::forget_sample_ids)
        .def_readonly("retain_sample_ids", &SplitSpec::retain_sample_ids)
        .def_readonly("subject_pairing", &SplitSpec::subject_pairing);

    m.def(
        "make_split",
        [](const World& w, const std::vector<Sample>& samples, const std::string& setting,
           double ratio, int n_agents, std::uint64_t seed) {
            SplitParams params;
            params.ratio = ratio;
            params.n_agents = n_agents;
            return make_split(w, samples, setting_from_string(setting), params, seed);
        },
        py::arg("world"), py::arg("samples"), py::arg("setting"), py::arg("ratio") = 0.30,
        py::arg("n_agents") = 3, py::arg("seed") = 0);

    // ---- model ----
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("vocab", &ModelConfig::vocab)
        .def_readwrite("width", &ModelConfig::width)
        .def_readwrite("depth", &ModelConfig::depth)
        .def_readwrite("ff_width", &ModelConfig::ff_width)
        .def_readwrite("context", &ModelConfig::context);

    py::class_<ModelState>(m, "ModelState")
        .def_property_readonly("param_count",
                               [](const ModelState& s) { return s.params.param_count(); })
        .def_property_readonly("has_reference", &ModelState::has_reference)
        .def_property_readonly("content_hash",
                               [](const ModelState& s) { return hash_hex(s.params.content_hash()); })
        .def("clone", &ModelState::clone)
        .def("take_reference_snapshot", &ModelState::take_reference_snapshot);

    m.def("init_model", &init_model, py::arg("config"), py::arg("seed"));
    m.def("nll", &nll, py::arg("model"), py::arg("question"), py::arg("answer"));
    m.def("sequence_logprob", &sequence_logprob, py::arg("model"), py::arg("question"),
          py::arg("answer"));
    m.def("greedy_decode", &greedy_decode, py::arg("model"), py::arg("question"),
          py::arg("max_len"));
    m.def("neuron_count", &neuron_count, py::arg("config"));
    m.def("prune_neurons", &prune_neurons, py::arg("model"), py::arg("neuron_ids"));
    m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    // ---- objectives (scalar loss values over (question, answer) batches) ----
    m.def(
        "loss_ga",
        [](const ModelState& s, const std::vector<std::pair<TokenSeq, TokenSeq>>& f) {
            return loss_ga(s, to_objective_batch(f));
        },
        py::arg("model"), py::arg("forget"));
    m.def(
        "loss_ga_diff",
        [](const ModelState& s, const std::vector<std::pair<TokenSeq, TokenSeq>>& f,
           const std::vector<std::pair<TokenSeq, TokenSeq>>& r, double beta) {
            return loss_ga_diff(s, to_objective_batch(f), to_objective_batch(r), beta);
        },
        py::arg("model"), py::arg("forget"), py::arg("retain"), py::arg("beta_gd") = 1.0);
    m.def(
        "loss_kl_min",
        [](const ModelState& s, const std::vector<std::pair<TokenSeq, TokenSeq>>& f,
           const std::vector<std::pair<TokenSeq, TokenSeq>>& r, double gamma) {
            return loss_kl_min(s, to_objective_batch(f), to_objective_batch(r), gamma);
        },
        py::arg("model"), py::arg("forget"), py::arg("retain"), py::arg("gamma_kl") = 1.0);
    m.def(
        "loss_npo",
        [](const ModelState& s, const std::vector<std::pair<TokenSeq, TokenSeq>>& f, double beta) {
            return loss_npo(s, to_objective_batch(f), beta);
        },
        py::arg("model"), py::arg("forget"), py::arg("beta_npo") = 0.5);
    m.def(
        "boundary_loss",
        [](const ModelState& s,
           const std::vector<std::tuple<int, std::vector<std::pair<TokenSeq, TokenSeq>>,
                                        std::vector<std::pair<TokenSeq, TokenSeq>>>>& paired,
           double margin) { return boundary_loss(s, to_paired(paired), margin); },
        py::arg("model"), py::arg("paired"), py::arg("margin") = 1.5);

    // ---- attacks ----
    m.def("default_random_prefix_pool", &default_random_prefix_pool);
    m.def("default_jailbreak_pool", &default_jailbreak_pool);

    // ---- evaluation ----
    m.def(
        "evaluate",
        [](const ModelState& s, const std::vector<Sample>& samples, const SplitSpec& split) {
            return report_to_dict(evaluate(s, samples, split));
        },
        py::arg("model"), py::arg("samples"), py::arg("split"));
    m.def(
        "filter_memorized",
        [](const ModelState& s, const std::vector<Sample>& samples, double threshold) {
            FilterResult r = filter_memorized(s, samples, threshold);
            return py::make_tuple(r.kept, r.dropped);
        },
        py::arg("model"), py::arg("samples"), py::arg("threshold") = 0.5);

    // ---- harness ----
    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_static("from_file", &RunConfig::from_file, py::arg("path"))
        .def_readwrite("out_dir", &RunConfig::out_dir)
        .def_readwrite("master_seed", &RunConfig::master_seed)
        .def_property(
            "method",
            [](const RunConfig& c) { return std::string(to_string(c.unlearn.method)); },
            [](RunConfig& c, const std::string& s) { c.unlearn.method = method_from_string(s); })
        .def_property(
            "setting", [](const RunConfig& c) { return std::string(to_string(c.setting)); },
            [](RunConfig& c, const std::string& s) { c.setting = setting_from_string(s); })
        .def_readwrite("world", &RunConfig::world)
        .def("finalize", &RunConfig::finalize)
        .def("config_hash", &RunConfig::config_hash);

    m.def(
        "pipeline",
        [](RunConfig cfg) {
            cfg.finalize();
            const RunManifest manifest = pipeline(cfg);
            py::dict d;
            d["complete"] = manifest.complete;
            d["config_hash"] = manifest.config_hash;
            py::dict stages;
            for (const auto& [name, status] : manifest.stages) stages[name.c_str()] = status;
            d["stages"] = stages;
            py::dict artifacts;
            for (const auto& [path, hash] : manifest.artifacts) artifacts[path.c_str()] = hash;
            d["artifacts"] = artifacts;
            return d;
        },
        py::arg("config"));

    m.attr("__version__") = "0.1.0";
}
