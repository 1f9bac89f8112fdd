// SPDX-License-Identifier: Apache-2.0
#include "alum/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "alum/error.hpp"

namespace alum {

namespace {

constexpr char kMagic[8] = {'A', 'L', 'U', 'M', 'C', 'K', 'P', 'T'};

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(std::string_view s) {
        u64(s.size());
        out_.append(s);
    }
    void raw(const char* p, std::size_t n) { out_.append(p, n); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(s_[pos_++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string out = s_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    void expect(const char* p, std::size_t n) {
        need(n);
        if (std::memcmp(s_.data() + pos_, p, n) != 0) {
            throw Error(ErrorKind::invalid_input, "checkpoint: bad magic");
        }
        pos_ += n;
    }
    bool done() const { return pos_ == s_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > s_.size() - pos_) {
            throw Error(ErrorKind::invalid_input, "checkpoint: truncated at byte " + std::to_string(pos_));
        }
    }

    const std::string& s_;
    std::size_t pos_ = 0;
};

void write_tensors(Writer& w, const std::map<std::string, Tensor>& tensors) {
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) {
            w.u64(d);
        }
        for (Real v : t.values()) {
            w.f32(static_cast<float>(v));
        }
    }
}

std::map<std::string, Tensor> read_tensors(Reader& r) {
    std::map<std::string, Tensor> out;
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        const std::uint32_t rank = r.u32();
        if (rank > 8) {
            throw Error(ErrorKind::invalid_input, "checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
        }
        Shape shape(rank);
        for (auto& d : shape) {
            d = r.u64();
        }
        std::vector<Real> data(shape_numel(shape));
        for (auto& v : data) {
            v = static_cast<Real>(r.f32());
        }
        if (!out.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
            throw Error(ErrorKind::invalid_input, "checkpoint: duplicate tensor '" + name + "'");
        }
    }
    return out;
}

} // namespace

std::string model_config_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["vocab_size"] = c.vocab_size;
    j["max_positions"] = c.max_positions;
    j["n_segments"] = c.n_segments;
    j["d_model"] = c.d_model;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["d_ff"] = c.d_ff;
    j["dropout"] = c.dropout;
    j["mlm_head"] = c.mlm_head;
    j["nsp_head"] = c.nsp_head;
    j["num_classes"] = c.num_classes;
    return j.dump();
}

ModelConfig parse_model_config_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        ModelConfig c;
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.max_positions = j.at("max_positions").get<std::size_t>();
        c.n_segments = j.at("n_segments").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.d_ff = j.at("d_ff").get<std::size_t>();
        c.dropout = j.at("dropout").get<double>();
        c.mlm_head = j.at("mlm_head").get<bool>();
        c.nsp_head = j.at("nsp_head").get<bool>();
        c.num_classes = j.at("num_classes").get<std::size_t>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::invalid_input, std::string("checkpoint: bad model config: ") + e.what());
    }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.str(model_config_json(ckpt.model));
    w.str(ckpt.vocab.serialize());
    write_tensors(w, ckpt.params.tensors);
    w.u8(ckpt.state ? 1 : 0);
    if (ckpt.state) {
        w.u64(ckpt.state->step);
        w.u64(ckpt.state->adam.t);
        write_tensors(w, ckpt.state->adam.m);
        write_tensors(w, ckpt.state->adam.v);
    }
    return w.take();
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    r.expect(kMagic, sizeof kMagic);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::invalid_input, "checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint c;
    c.model = parse_model_config_json(r.str());
    c.vocab = Vocab::parse(r.str());
    c.params.tensors = read_tensors(r);
    if (r.u8() == 1) {
        TrainState s;
        s.step = r.u64();
        s.adam.t = r.u64();
        s.adam.m = read_tensors(r);
        s.adam.v = read_tensors(r);
        c.state = std::move(s);
    }
    if (!r.done()) {
        throw Error(ErrorKind::invalid_input, "checkpoint: trailing bytes");
    }
    c.model.validate();
    if (c.vocab.size() != c.model.vocab_size) {
        throw Error(ErrorKind::invalid_input, "checkpoint: vocabulary has " + std::to_string(c.vocab.size()) +
                                                  " entries but the model expects " +
                                                  std::to_string(c.model.vocab_size));
    }
    check_parameters(c.params, c.model);
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(ckpt);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
            throw Error(ErrorKind::io_error, "checkpoint: cannot write " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw Error(ErrorKind::input_not_found, "checkpoint: cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_checkpoint(ss.str());
}

} // namespace alum
