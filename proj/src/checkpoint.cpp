#include "demenscan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <zlib.h>

namespace demenscan {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'S', 'C'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

void append_u32(std::vector<unsigned char>& buf, uint32_t v) {
    unsigned char b[4];
    std::memcpy(b, &v, 4);
    buf.insert(buf.end(), b, b + 4);
}

uint32_t read_u32(const unsigned char* p) {
    uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}

uint32_t crc_of(const unsigned char* data, size_t len) {
    return static_cast<uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

} // namespace

void checkpoint_save(const ModelSpec& spec, const Parameters& params, const std::string& path) {
    spec.validate();
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    append_u32(buf, kCheckpointVersion);

    const std::string json = model_spec_to_json(spec);
    append_u32(buf, static_cast<uint32_t>(json.size()));
    buf.insert(buf.end(), json.begin(), json.end());

    for_each_tensor(params, [&buf](const Tensor& t) {
        const size_t bytes = t.size() * sizeof(float);
        const size_t off = buf.size();
        buf.resize(off + bytes);
        std::memcpy(buf.data() + off, t.data(), bytes);
    });

    append_u32(buf, crc_of(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("checkpoint: write failed: " + path);
}

std::pair<ModelSpec, Parameters> checkpoint_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw CheckpointError("checkpoint: cannot open: " + path);
    const std::streamsize size = in.tellg();
    if (size < 16) throw CheckpointError("checkpoint: truncated file (header): " + path);
    std::vector<unsigned char> buf(static_cast<size_t>(size));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(buf.data()), size);
    if (!in) throw CheckpointError("checkpoint: read failed: " + path);

    if (std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw CheckpointError("checkpoint: bad magic (expected DMSC): " + path);
    }
    const uint32_t version = read_u32(buf.data() + 4);
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) +
                              ": " + path);
    }
    const uint32_t stored_crc = read_u32(buf.data() + buf.size() - 4);
    const uint32_t actual_crc = crc_of(buf.data(), buf.size() - 4);
    if (stored_crc != actual_crc) {
        throw CheckpointError("checkpoint: crc mismatch (file corrupt): " + path);
    }

    const uint32_t json_len = read_u32(buf.data() + 8);
    if (12 + static_cast<size_t>(json_len) + 4 > buf.size()) {
        throw CheckpointError("checkpoint: truncated file (spec header): " + path);
    }
    const std::string json(reinterpret_cast<const char*>(buf.data() + 12), json_len);
    ModelSpec spec;
    try {
        spec = model_spec_from_json(json);
    } catch (const ParameterError& e) {
        throw CheckpointError(std::string("checkpoint: invalid architecture header: ") +
                              e.what());
    }

    const size_t payload_off = 12 + json_len;
    const size_t payload_len = buf.size() - 4 - payload_off;
    if (payload_len != spec.param_count() * sizeof(float)) {
        throw CheckpointError("checkpoint: payload length " + std::to_string(payload_len) +
                              " does not match architecture (" +
                              std::to_string(spec.param_count() * sizeof(float)) +
                              " bytes expected): " + path);
    }

    Parameters params = parameters_like<float>(spec);
    size_t off = payload_off;
    for_each_tensor(params, [&buf, &off](Tensor& t) {
        const size_t bytes = t.size() * sizeof(float);
        std::memcpy(t.data(), buf.data() + off, bytes);
        off += bytes;
    });
    return {spec, std::move(params)};
}

} // namespace demenscan
