#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bespoke/common.hpp"

namespace bespoke {

enum class Activation { ReLU, Identity };

inline std::string activation_name(Activation a) { return a == Activation::ReLU ? "relu" : "identity"; }

/// One fully-connected layer of integer weights. Row n of `weights` is the
/// weight vector of neuron n; `requant_shift` is the arithmetic right shift
/// applied to the accumulator before clamping back to the activation range.
struct Layer {
    std::vector<std::vector<int>> weights;  // [out_dim][in_dim]
    std::vector<int> biases;                // [out_dim]
    Activation activation = Activation::ReLU;
    int requant_shift = 0;

    int out_dim() const { return static_cast<int>(weights.size()); }
    int in_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().size()); }
};

struct QuantizedMlp {
    std::string name;
    int weight_bits = 4;
    int activation_bits = 4;
    std::vector<Layer> layers;

    int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

    int weight_min() const { return -(1 << (weight_bits - 1)); }
    int weight_max() const { return (1 << (weight_bits - 1)) - 1; }
    int activation_min() const { return -(1 << (activation_bits - 1)); }
    int activation_max() const { return (1 << (activation_bits - 1)) - 1; }
};

/// Identifies a neuron by position; layers and neurons are zero-indexed.
struct NeuronId {
    int layer = 0;
    int neuron = 0;

    friend bool operator==(const NeuronId& a, const NeuronId& b) {
        return a.layer == b.layer && a.neuron == b.neuron;
    }
    friend bool operator<(const NeuronId& a, const NeuronId& b) {
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.neuron < b.neuron;
    }
    std::string str() const { return std::to_string(layer) + ":" + std::to_string(neuron); }
};

inline NeuronId parse_neuron_id(const std::string& s) {
    auto pos = s.find(':');
    if (pos == std::string::npos)
        throw Error(ErrorCode::ParseError, "bad neuron id '" + s + "' (expected layer:neuron)");
    return NeuronId{std::stoi(s.substr(0, pos)), std::stoi(s.substr(pos + 1))};
}

inline void validate_model(const QuantizedMlp& m) {
    if (m.activation_bits != 4 && m.activation_bits != 5)
        throw Error(ErrorCode::UnsupportedActivationBits,
                    "activation_bits must be 4 or 5, got " + std::to_string(m.activation_bits));
    if (m.weight_bits < 2 || m.weight_bits > 8)
        throw Error(ErrorCode::InvalidArgument, "weight_bits must be in [2,8], got " + std::to_string(m.weight_bits));
    if (m.layers.empty()) throw Error(ErrorCode::InvalidTopology, "model has no layers");
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const Layer& layer = m.layers[li];
        const std::string at = "layer " + std::to_string(li);
        if (layer.weights.empty()) throw Error(ErrorCode::InvalidTopology, at + ": empty weight matrix");
        const std::size_t in_dim = layer.weights.front().size();
        if (in_dim == 0) throw Error(ErrorCode::InvalidTopology, at + ": zero input dimension");
        for (std::size_t r = 0; r < layer.weights.size(); ++r) {
            if (layer.weights[r].size() != in_dim)
                throw Error(ErrorCode::DimensionMismatch,
                            at + ", row " + std::to_string(r) + ": ragged weight matrix");
            for (std::size_t c = 0; c < in_dim; ++c) {
                int w = layer.weights[r][c];
                if (w < m.weight_min() || w > m.weight_max())
                    throw Error(ErrorCode::OutOfRangeWeight,
                                at + ", row " + std::to_string(r) + ", col " + std::to_string(c) + ": weight " +
                                    std::to_string(w) + " outside [" + std::to_string(m.weight_min()) + "," +
                                    std::to_string(m.weight_max()) + "]");
            }
        }
        if (layer.biases.size() != layer.weights.size())
            throw Error(ErrorCode::DimensionMismatch,
                        at + ": " + std::to_string(layer.biases.size()) + " biases for " +
                            std::to_string(layer.weights.size()) + " neurons");
        if (layer.requant_shift < 0 || layer.requant_shift > 31)
            throw Error(ErrorCode::InvalidArgument, at + ": requant_shift outside [0,31]");
        if (li + 1 < m.layers.size() && m.layers[li + 1].weights.front().size() != layer.weights.size())
            throw Error(ErrorCode::DimensionMismatch,
                        at + ": output dimension " + std::to_string(layer.weights.size()) +
                            " does not match next layer input dimension " +
                            std::to_string(m.layers[li + 1].weights.front().size()));
    }
}

inline long long mac_count(const QuantizedMlp& m) {
    long long total = 0;
    for (const Layer& l : m.layers) total += static_cast<long long>(l.out_dim()) * l.in_dim();
    return total;
}

// ---- JSON serialization -------------------------------------------------
// Canonical form: nlohmann objects keep keys sorted; all values are integers
// or strings, so dumps are byte-stable.

inline nlohmann::json model_to_json(const QuantizedMlp& m) {
    nlohmann::json layers = nlohmann::json::array();
    for (const Layer& l : m.layers) {
        layers.push_back({{"activation", activation_name(l.activation)},
                          {"biases", l.biases},
                          {"requant_shift", l.requant_shift},
                          {"weights", l.weights}});
    }
    return {{"activation_bits", m.activation_bits},
            {"layers", layers},
            {"name", m.name},
            {"weight_bits", m.weight_bits}};
}

inline QuantizedMlp load_model(const nlohmann::json& doc) {
    QuantizedMlp m;
    try {
        m.name = doc.at("name").get<std::string>();
        m.weight_bits = doc.at("weight_bits").get<int>();
        m.activation_bits = doc.at("activation_bits").get<int>();
        for (const auto& jl : doc.at("layers")) {
            Layer l;
            l.weights = jl.at("weights").get<std::vector<std::vector<int>>>();
            l.biases = jl.at("biases").get<std::vector<int>>();
            l.requant_shift = jl.at("requant_shift").get<int>();
            std::string act = jl.at("activation").get<std::string>();
            if (act == "relu")
                l.activation = Activation::ReLU;
            else if (act == "identity")
                l.activation = Activation::Identity;
            else
                throw Error(ErrorCode::ParseError, "unknown activation '" + act + "'");
            m.layers.push_back(std::move(l));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("model document: ") + e.what());
    }
    validate_model(m);
    return m;
}

inline QuantizedMlp load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open model file " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, path + ": " + e.what());
    }
    return load_model(doc);
}

inline std::string model_to_string(const QuantizedMlp& m) { return model_to_json(m).dump(2) + "\n"; }

inline std::uint64_t model_hash(const QuantizedMlp& m) { return fnv1a64(model_to_string(m)); }

// ---- Reference inference -------------------------------------------------

struct InferenceResult {
    std::vector<int> scores;                          // raw output-layer activations
    int argmax = 0;                                   // first index of the maximum score
    std::vector<std::vector<long long>> accumulators; // per layer, per neuron pre-activation sums
    std::vector<std::vector<int>> activations;        // per layer, post-activation values
};

inline int requantize(long long acc, int shift, int act_bits, Activation act) {
    long long v = acc >> shift;  // arithmetic shift
    const long long lim = (1ll << (act_bits - 1)) - 1;
    v = std::clamp(v, -lim, lim);  // symmetric clamp
    if (act == Activation::ReLU && v < 0) v = 0;
    return static_cast<int>(v);
}

/// Exact integer forward pass. The per-neuron accumulator trace is the oracle
/// every other execution path (scheduler, simulator, emitted programs) is
/// checked against.
inline InferenceResult reference_inference(const QuantizedMlp& m, const std::vector<int>& input) {
    if (static_cast<int>(input.size()) != m.input_dim())
        throw Error(ErrorCode::DimensionMismatch,
                    "input size " + std::to_string(input.size()) + " != first layer in_dim " +
                        std::to_string(m.input_dim()));
    for (int a : input)
        if (a < m.activation_min() || a > m.activation_max())
            throw Error(ErrorCode::ActivationOutOfRange, "input value " + std::to_string(a) + " outside range");

    InferenceResult res;
    std::vector<int> acts = input;
    for (const Layer& layer : m.layers) {
        std::vector<long long> accs(static_cast<std::size_t>(layer.out_dim()));
        std::vector<int> next(static_cast<std::size_t>(layer.out_dim()));
        for (int n = 0; n < layer.out_dim(); ++n) {
            long long acc = layer.biases[static_cast<std::size_t>(n)];
            for (int i = 0; i < layer.in_dim(); ++i)
                acc += static_cast<long long>(layer.weights[static_cast<std::size_t>(n)][static_cast<std::size_t>(i)]) *
                       acts[static_cast<std::size_t>(i)];
            accs[static_cast<std::size_t>(n)] = acc;
            next[static_cast<std::size_t>(n)] = requantize(acc, layer.requant_shift, m.activation_bits, layer.activation);
        }
        res.accumulators.push_back(std::move(accs));
        res.activations.push_back(next);
        acts = std::move(next);
    }
    res.scores = acts;
    res.argmax = static_cast<int>(std::max_element(res.scores.begin(), res.scores.end()) - res.scores.begin());
    return res;
}

// ---- Sample model generation ----------------------------------------------

/// Deterministic pseudo-random model: same topology/seed yields a
/// byte-identical serialized model. Weights and biases are uniform over the
/// legal weight range; requant shifts are sized from the worst-case
/// accumulator magnitude so outputs use the activation range.
inline QuantizedMlp generate_sample_model(const std::vector<int>& topology, std::uint64_t seed, int weight_bits = 4,
                                          int activation_bits = 4, std::string name = "") {
    if (topology.size() < 2) throw Error(ErrorCode::InvalidTopology, "topology needs at least input and output dims");
    for (int d : topology)
        if (d < 1) throw Error(ErrorCode::InvalidTopology, "topology dimensions must be >= 1");

    QuantizedMlp m;
    m.weight_bits = weight_bits;
    m.activation_bits = activation_bits;
    if (name.empty()) {
        std::ostringstream os;
        os << "sample";
        for (int d : topology) os << "-" << d;
        os << "-s" << seed;
        name = os.str();
    }
    m.name = std::move(name);

    std::mt19937_64 rng(mix_seed(seed, 0x6d6c70));
    const int wmin = m.weight_min();
    const std::uint64_t span = static_cast<std::uint64_t>(m.weight_max() - wmin + 1);
    auto draw = [&]() { return wmin + static_cast<int>(rng() % span); };

    const long long amax = (1ll << (activation_bits - 1)) - 1;
    for (std::size_t li = 0; li + 1 < topology.size(); ++li) {
        Layer l;
        const int in_dim = topology[li];
        const int out_dim = topology[li + 1];
        l.weights.assign(static_cast<std::size_t>(out_dim), std::vector<int>(static_cast<std::size_t>(in_dim)));
        l.biases.assign(static_cast<std::size_t>(out_dim), 0);
        for (auto& row : l.weights)
            for (int& w : row) w = draw();
        for (int& b : l.biases) b = draw();
        l.activation = (li + 2 == topology.size()) ? Activation::Identity : Activation::ReLU;
        // worst-case |acc| <= in_dim * |w|max * |a|max + |bias|max
        long long worst = static_cast<long long>(in_dim) * std::max(std::abs(m.weight_min()), m.weight_max()) *
                              std::max(std::abs(m.activation_min()), static_cast<int>(amax)) +
                          std::max(std::abs(m.weight_min()), m.weight_max());
        int shift = 0;
        while ((worst >> shift) > amax) ++shift;
        l.requant_shift = shift;
        m.layers.push_back(std::move(l));
    }
    validate_model(m);
    return m;
}

}  // namespace bespoke
