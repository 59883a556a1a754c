// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#include "ooc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <zlib.h>

#include "json.hpp"
#include "ooc/run_config.hpp"

namespace ooc {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'O', 'O', 'C', 'N'};
constexpr uint32_t kFormatVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& data, size_t offset) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<uint8_t>(data[offset + i])) << (8 * i);
    return v;
}

void put_scalar(std::string& out, Scalar s) {
    if constexpr (sizeof(Scalar) == 8) {
        uint64_t bits = std::bit_cast<uint64_t>(static_cast<double>(s));
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    } else {
        uint32_t bits = std::bit_cast<uint32_t>(static_cast<float>(s));
        put_u32(out, bits);
    }
}

Scalar get_scalar(const std::string& data, size_t offset) {
    if constexpr (sizeof(Scalar) == 8) {
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<uint64_t>(static_cast<uint8_t>(data[offset + i])) << (8 * i);
        return std::bit_cast<double>(bits);
    } else {
        return std::bit_cast<float>(get_u32(data, offset));
    }
}

const char* dtype_name() { return sizeof(Scalar) == 8 ? "f64" : "f32"; }

/// Tensor directory order: trainable tensors, then the running statistics.
void visit_tensors(const ModelParams& params,
                   const std::function<void(const std::string&, const Matrix&)>& fn) {
    params.for_each_param([&](const ParamTensor& p) { fn(p.name, p.value); });
    fn("head_bn.running_mean", params.head_bn_state.running_mean);
    fn("head_bn.running_var", params.head_bn_state.running_var);
}

void visit_tensors(ModelParams& params,
                   const std::function<void(const std::string&, Matrix&)>& fn) {
    params.for_each_param([&](ParamTensor& p) { fn(p.name, p.value); });
    fn("head_bn.running_mean", params.head_bn_state.running_mean);
    fn("head_bn.running_var", params.head_bn_state.running_var);
}

} // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path) {
    std::string payload;
    ordered_json tensors = ordered_json::array();
    visit_tensors(params, [&](const std::string& name, const Matrix& value) {
        ordered_json t;
        t["name"] = name;
        t["rows"] = value.rows();
        t["cols"] = value.cols();
        t["offset"] = payload.size();
        tensors.push_back(std::move(t));
        for (Scalar s : value.values()) put_scalar(payload, s);
    });

    ordered_json header;
    header["dtype"] = dtype_name();
    header["config"] = model_config_to_json(config);
    header["tensors"] = std::move(tensors);
    std::string header_bytes = header.dump();

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<uint32_t>(header_bytes.size()));
    out += header_bytes;
    out += payload;
    uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
    put_u32(out, crc);

    std::ofstream file(path, std::ios::binary);
    if (!file) throw Error("save_checkpoint: cannot write " + path.string());
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw Error("save_checkpoint: short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw Error("load_checkpoint: cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    if (data.size() < 12 || std::memcmp(data.data(), kMagic, 4) != 0)
        throw Error("load_checkpoint: not an OOCN checkpoint");
    uint32_t version = get_u32(data, 4);
    if (version != kFormatVersion)
        throw Error("load_checkpoint: unsupported format_version " + std::to_string(version) +
                    " (expected " + std::to_string(kFormatVersion) + ")");
    uint32_t header_len = get_u32(data, 8);
    size_t header_start = 12;
    if (data.size() < header_start + header_len + 4)
        throw Error("load_checkpoint: truncated file");

    json header;
    try {
        header = json::parse(data.substr(header_start, header_len));
    } catch (const json::exception& e) {
        throw Error("load_checkpoint: corrupt header: " + std::string(e.what()));
    }
    if (header.at("dtype").get<std::string>() != dtype_name())
        throw Error("load_checkpoint: dtype " + header.at("dtype").get<std::string>() +
                    " does not match this build (" + dtype_name() + ")");

    size_t payload_start = header_start + header_len;
    size_t payload_len = data.size() - payload_start - 4;
    uint32_t stored_crc = get_u32(data, data.size() - 4);
    uint32_t actual_crc = static_cast<uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(data.data() + payload_start), static_cast<uInt>(payload_len)));
    if (stored_crc != actual_crc) throw Error("load_checkpoint: payload CRC mismatch");

    Checkpoint ckpt;
    ckpt.config = model_config_from_json(header.at("config"));
    ckpt.params = ModelParams::init(ckpt.config, 0);

    std::map<std::string, Matrix*> slots;
    visit_tensors(ckpt.params, [&](const std::string& name, Matrix& value) {
        slots[name] = &value;
    });

    size_t filled = 0;
    for (const json& t : header.at("tensors")) {
        std::string name = t.at("name").get<std::string>();
        auto it = slots.find(name);
        if (it == slots.end()) throw Error("load_checkpoint: unexpected tensor '" + name + "'");
        Matrix& m = *it->second;
        if (t.at("rows").get<int>() != m.rows() || t.at("cols").get<int>() != m.cols())
            throw Error("load_checkpoint: tensor '" + name + "' shape mismatch");
        size_t offset = t.at("offset").get<size_t>();
        size_t bytes = m.size() * sizeof(Scalar);
        if (offset + bytes > payload_len)
            throw Error("load_checkpoint: tensor '" + name + "' overruns the payload");
        for (size_t i = 0; i < m.size(); ++i)
            m.values()[i] = get_scalar(data, payload_start + offset + i * sizeof(Scalar));
        ++filled;
    }
    if (filled != slots.size())
        throw Error("load_checkpoint: tensor directory is missing entries");
    return ckpt;
}

} // namespace ooc
