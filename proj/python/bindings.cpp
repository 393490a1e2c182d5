#include <optional>
#include <string>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bet/analyzer.hpp"
#include "bet/bet_attention.hpp"
#include "bet/checkpoint.hpp"
#include "bet/errors.hpp"
#include "bet/syntax_hints.hpp"
#include "bet/training.hpp"

namespace py = pybind11;
using namespace bet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor::from(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::object opt(const std::optional<double>& v) { return v ? py::cast(*v) : py::none(); }

py::dict stats_dict(const AttnStats& s) {
    py::dict d;
    d["layer"] = s.layer;
    d["head"] = s.head ? py::cast(*s.head) : py::none();
    d["ca"] = opt(s.ca);
    d["ha_mean"] = opt(s.ha_mean);
    d["ha_std"] = opt(s.ha_std);
    d["ratio"] = opt(s.ratio);
    d["diag_count"] = s.diag_count;
    d["lower_count"] = s.lower_count;
    return d;
}

py::dict metrics_dict(const EvalMetrics& m) {
    py::dict d;
    d["cross_entropy_nats"] = m.cross_entropy_nats;
    d["perplexity"] = m.perplexity;
    d["bpc"] = m.bpc;
    d["predicted_tokens"] = m.predicted_tokens;
    return d;
}

py::list curve_list(const std::vector<LossRecord>& curve) {
    py::list out;
    for (const auto& r : curve) {
        py::dict d;
        d["step"] = r.step;
        d["lm_loss"] = r.lm_loss;
        d["pointer_loss"] = r.pointer_loss;
        d["total_loss"] = r.total_loss;
        out.append(d);
    }
    return out;
}

DependencyTree tree_from(const std::vector<int>& heads_one_based) {
    return DependencyTree::from_one_based(std::vector<std::string>(heads_one_based.size(), "_"), heads_one_based);
}

std::vector<int> encode_checked(const Checkpoint& cp, const std::string& text) {
    auto ids = cp.vocab.encode(text);
    if (ids.empty()) throw ValidationError("text produced no tokens");
    return ids;
}

}  // namespace

PYBIND11_MODULE(_bet, m) {
    m.doc() = "Bird-eye transformer language models";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_property_readonly("config_json",
                               [](const Checkpoint& cp) { return to_json(cp.model.config(), cp.train_config).dump(); })
        .def_property_readonly("step", [](const Checkpoint& cp) { return cp.optimizer.step; })
        .def_property_readonly("vocab", [](const Checkpoint& cp) { return cp.vocab.tokens(); })
        .def("save", [](const Checkpoint& cp, const std::string& path) { save_checkpoint(cp, path); })
        .def("to_bytes", [](const Checkpoint& cp) { return py::bytes(serialize_checkpoint(cp)); })
        .def("encode", [](const Checkpoint& cp, const std::string& text) { return cp.vocab.encode(text); })
        .def("evaluate", [](const Checkpoint& cp, const std::string& text) { return metrics_dict(evaluate(cp, text)); })
        .def(
            "logits",
            [](const Checkpoint& cp, const std::string& text) {
                NoGradGuard g;
                const auto ids = encode_checked(cp, text);
                return to_array(cp.model.forward(ids).logits);
            },
            py::arg("text"))
        .def(
            "attention",
            [](const Checkpoint& cp, const std::string& text) {
                NoGradGuard g;
                const auto ids = encode_checked(cp, text);
                const auto fwd = cp.model.forward(ids);
                py::list layers;
                for (const auto& layer : fwd.traces) {
                    py::list heads;
                    for (const auto& tr : layer) heads.append(to_array(tr.weights()));
                    layers.append(heads);
                }
                return layers;
            },
            py::arg("text"))
        .def(
            "analyze",
            [](const Checkpoint& cp, const std::string& text, std::optional<std::size_t> layer,
               std::optional<std::size_t> head) {
                const auto ids = cp.vocab.encode(text);
                std::vector<std::vector<int>> inputs;
                for (const auto& w : evaluation_windows(ids, cp.model.config().max_seq_len))
                    inputs.emplace_back(w.begin(), w.end() - 1);
                CorpusStatsOptions o;
                o.layer = layer;
                o.head = head;
                py::list out;
                for (const auto& s : corpus_stats(cp.model, inputs, o)) out.append(stats_dict(s));
                return out;
            },
            py::arg("text"), py::arg("layer") = py::none(), py::arg("head") = py::none());

    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
    m.def(
        "checkpoint_from_bytes", [](const py::bytes& b) { return deserialize_checkpoint(std::string(b)); },
        py::arg("data"));

    m.def(
        "train",
        [](const std::string& config_json, const std::string& corpus, std::optional<std::string> treebank_text) {
            const auto rc = run_config_from_json(nlohmann::json::parse(config_json));
            std::optional<std::vector<DependencyTree>> trees;
            if (treebank_text) trees = parse_treebank(std::string_view(*treebank_text));
            TrainResult res;
            {
                py::gil_scoped_release release;
                res = train(rc.model, rc.train, corpus, trees ? &*trees : nullptr);
            }
            return py::make_tuple(std::move(res.checkpoint), curve_list(res.curve));
        },
        py::arg("config_json"), py::arg("corpus"), py::arg("treebank") = py::none());

    m.def(
        "train_to_directory",
        [](const std::string& config_json, const std::string& corpus_path, const std::string& out_dir,
           std::optional<std::string> treebank_path) {
            const auto rc = run_config_from_json(nlohmann::json::parse(config_json));
            TrainResult res;
            {
                py::gil_scoped_release release;
                res = train_to_directory(rc.model, rc.train, corpus_path, treebank_path, out_dir);
            }
            return curve_list(res.curve);
        },
        py::arg("config_json"), py::arg("corpus_path"), py::arg("out_dir"), py::arg("treebank_path") = py::none());

    m.def(
        "matrix_stats",
        [](const Array& a, bool include_first_row) { return stats_dict(matrix_stats(to_tensor(a), include_first_row)); },
        py::arg("attention"), py::arg("include_first_row") = true);

    m.def(
        "attention_head",
        [](const Array& x, const Array& wq, const Array& wk, const Array& wv, std::optional<Array> gate,
           const std::string& diag_policy, std::optional<double> forced_gate) {
            NoGradGuard g;
            BlockParams bp;
            bp.heads.push_back({to_tensor(wq), to_tensor(wk), to_tensor(wv)});
            const auto policy = DiagPolicy::parse(diag_policy);
            const auto xt = to_tensor(x);
            py::dict out;
            AttentionTrace tr;
            if (gate) {
                bp.gates.push_back(to_tensor(*gate));
                tr = bet_attention(xt, bp, 0, policy, forced_gate);
            } else {
                tr = standard_attention(xt, bp, 0, policy);
            }
            out["a"] = to_array(tr.a);
            out["h"] = to_array(tr.h);
            out["r"] = tr.r ? py::object(to_array(*tr.r)) : py::none();
            out["a_prime"] = tr.a_prime ? py::object(to_array(*tr.a_prime)) : py::none();
            out["h_prime"] = tr.h_prime ? py::object(to_array(*tr.h_prime)) : py::none();
            return out;
        },
        py::arg("x"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("gate") = py::none(),
        py::arg("diag_policy") = "keep", py::arg("forced_gate") = py::none());

    m.def(
        "parse_treebank",
        [](const std::string& text) {
            py::list out;
            for (const auto& t : parse_treebank(std::string_view(text))) {
                std::vector<int> heads;
                for (int h : t.heads) heads.push_back(h == DependencyTree::kRoot ? 0 : h + 1);
                out.append(py::make_tuple(t.tokens, heads));
            }
            return out;
        },
        py::arg("text"));

    m.def(
        "extract_hint", [](const std::vector<int>& heads, std::size_t t) { return extract_hint(tree_from(heads), t); },
        py::arg("heads"), py::arg("t"), "Hint for position t (0-based) given 1-based CoNLL heads");

    m.def(
        "hint_targets",
        [](const std::vector<int>& heads) {
            const auto ht = build_hint_targets(tree_from(heads));
            std::vector<py::object> out;
            for (std::size_t i = 0; i < ht.size(); ++i)
                out.push_back(ht.row_valid[i] ? py::cast(ht.target_index[i]) : py::none());
            return out;
        },
        py::arg("heads"));

    m.def(
        "pointer_loss",
        [](const Array& attention, const std::vector<int>& heads) {
            return pointer_loss(to_tensor(attention), build_hint_targets(tree_from(heads))).value.item();
        },
        py::arg("attention"), py::arg("heads"));
}
