#include "uad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "json.hpp"
#include "uad/image.hpp"  // atomic_write_bytes

namespace uad {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian float32");

namespace {

constexpr char kMagic[8] = {'U', 'A', 'D', 'C', 'K', 'P', 'T', '\n'};

using nlohmann::json;
using nlohmann::ordered_json;

void append_u32(std::string& out, uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

uint32_t read_u32(const std::string& bytes, size_t off) {
    uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Reject configs with misspelled or unknown keys instead of silently
// defaulting them.
void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* who) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok)
            throw std::invalid_argument(std::string(who) + ": unknown field '" + key + "'");
    }
}

template <typename T>
void get_field(const json& j, const char* key, T& out, const char* who) {
    if (!j.contains(key)) return;  // absent fields keep their defaults
    const json& v = j.at(key);
    // nlohmann's get<> coerces across numeric kinds (1.5 -> 1, true -> 1);
    // a config contract should reject that, not round it
    bool kind_ok = true;
    if constexpr (std::is_same_v<T, bool>)
        kind_ok = v.is_boolean();
    else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>)
        kind_ok = v.is_number_unsigned() ||
                  (v.is_number_integer() && v.template get<int64_t>() >= 0);
    else if constexpr (std::is_integral_v<T>)
        kind_ok = v.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>)
        kind_ok = v.is_number();
    if (!kind_ok)
        throw std::invalid_argument(std::string(who) + ": field '" + key + "' has the wrong type");
    try {
        out = v.get<T>();
    } catch (const json::exception&) {
        throw std::invalid_argument(std::string(who) + ": field '" + key + "' has the wrong type");
    }
}

ordered_json encoder_config_json(const EncoderConfig& c) {
    ordered_json j;
    j["backbone"] = c.backbone;
    j["in_channels"] = c.in_channels;
    j["input_size"] = c.input_size;
    j["output_dim"] = c.output_dim;
    j["epsilon_margin"] = c.epsilon_margin;
    j["learning_rate"] = c.learning_rate;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    return j;
}

EncoderConfig encoder_config_parse(const json& j) {
    check_keys(j,
               {"backbone", "in_channels", "input_size", "output_dim", "epsilon_margin",
                "learning_rate", "batch_size", "epochs"},
               "encoder config");
    EncoderConfig c;
    get_field(j, "backbone", c.backbone, "encoder config");
    get_field(j, "in_channels", c.in_channels, "encoder config");
    get_field(j, "input_size", c.input_size, "encoder config");
    get_field(j, "output_dim", c.output_dim, "encoder config");
    get_field(j, "epsilon_margin", c.epsilon_margin, "encoder config");
    get_field(j, "learning_rate", c.learning_rate, "encoder config");
    get_field(j, "batch_size", c.batch_size, "encoder config");
    get_field(j, "epochs", c.epochs, "encoder config");
    c.validate();
    return c;
}

ordered_json denoiser_config_json(const DenoiserConfig& c) {
    ordered_json j;
    j["in_channels"] = c.in_channels;
    j["input_size"] = c.input_size;
    j["base_channels"] = c.base_channels;
    j["channel_multipliers"] = c.channel_multipliers;
    j["groups"] = c.groups;
    j["time_embed_dim"] = c.time_embed_dim;
    j["cond_dim"] = c.cond_dim;
    j["attention_levels"] = c.attention_levels;
    return j;
}

DenoiserConfig denoiser_config_parse(const json& j) {
    check_keys(j,
               {"in_channels", "input_size", "base_channels", "channel_multipliers", "groups",
                "time_embed_dim", "cond_dim", "attention_levels"},
               "denoiser config");
    DenoiserConfig c;
    get_field(j, "in_channels", c.in_channels, "denoiser config");
    get_field(j, "input_size", c.input_size, "denoiser config");
    get_field(j, "base_channels", c.base_channels, "denoiser config");
    get_field(j, "channel_multipliers", c.channel_multipliers, "denoiser config");
    get_field(j, "groups", c.groups, "denoiser config");
    get_field(j, "time_embed_dim", c.time_embed_dim, "denoiser config");
    get_field(j, "cond_dim", c.cond_dim, "denoiser config");
    get_field(j, "attention_levels", c.attention_levels, "denoiser config");
    c.validate();
    return c;
}

ordered_json tensor_index(const std::vector<nn::NamedParam<float>>& params) {
    ordered_json idx = ordered_json::array();
    uint64_t offset = 0;
    for (const auto& np : params) {
        ordered_json t;
        t["name"] = np.name;
        t["shape"] = np.p->w.shape;
        t["offset"] = offset;
        t["count"] = np.p->w.numel();
        idx.push_back(t);
        offset += static_cast<uint64_t>(np.p->w.numel()) * 4;
    }
    return idx;
}

std::string assemble(const ordered_json& header,
                     const std::vector<nn::NamedParam<float>>& params) {
    const std::string htext = header.dump();
    std::string out;
    out.append(kMagic, 8);
    append_u32(out, static_cast<uint32_t>(kCheckpointVersion));
    append_u32(out, static_cast<uint32_t>(htext.size()));
    out += htext;
    for (const auto& np : params)
        out.append(reinterpret_cast<const char*>(np.p->w.data.data()),
                   static_cast<size_t>(np.p->w.numel()) * 4);
    return out;
}

struct Parsed {
    json header;
    size_t blob_start = 0;
    std::string bytes;
};

Parsed parse_archive(const std::filesystem::path& path) {
    Parsed p;
    p.bytes = read_file(path);
    if (p.bytes.size() < 16 || std::memcmp(p.bytes.data(), kMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path.string());
    const uint32_t version = read_u32(p.bytes, 8);
    if (version != static_cast<uint32_t>(kCheckpointVersion))
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const uint32_t hlen = read_u32(p.bytes, 12);
    if (p.bytes.size() < 16 + static_cast<size_t>(hlen))
        throw std::runtime_error("truncated checkpoint header: " + path.string());
    try {
        p.header = json::parse(p.bytes.substr(16, hlen));
    } catch (const json::exception& e) {
        throw std::runtime_error("corrupt checkpoint header: " + std::string(e.what()));
    }
    p.blob_start = 16 + hlen;
    return p;
}

// The stored tensor index must exactly match the architecture rebuilt from
// the stored config; any drift means the file belongs to a different model.
void load_tensors(const Parsed& p, const std::vector<nn::NamedParam<float>>& params) {
    if (!p.header.contains("tensors") || !p.header["tensors"].is_array())
        throw std::runtime_error("checkpoint header lacks a tensor index");
    const auto& idx = p.header["tensors"];
    if (idx.size() != params.size())
        throw std::runtime_error("checkpoint does not match architecture: expected " +
                                 std::to_string(params.size()) + " tensors, file has " +
                                 std::to_string(idx.size()));
    uint64_t expected_bytes = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& t = idx[i];
        const std::string name = t.at("name").get<std::string>();
        if (name != params[i].name)
            throw std::runtime_error("checkpoint does not match architecture: tensor '" + name +
                                     "' where '" + params[i].name + "' was expected");
        const auto shape = t.at("shape").get<std::vector<int>>();
        if (shape != params[i].p->w.shape)
            throw std::runtime_error("checkpoint does not match architecture: tensor '" + name +
                                     "' has a different shape");
        expected_bytes += static_cast<uint64_t>(params[i].p->w.numel()) * 4;
    }
    if (p.bytes.size() - p.blob_start != expected_bytes)
        throw std::runtime_error("checkpoint blob size mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        const uint64_t off = idx[i].at("offset").get<uint64_t>();
        const uint64_t len = static_cast<uint64_t>(params[i].p->w.numel()) * 4;
        if (off + len > expected_bytes)
            throw std::runtime_error("checkpoint tensor offset out of range: " +
                                     params[i].name);
        std::memcpy(params[i].p->w.data.data(), p.bytes.data() + p.blob_start + off,
                    static_cast<size_t>(len));
    }
}

int64_t read_trained_steps(const json& header) {
    if (!header.contains("trained_steps"))
        throw std::runtime_error("checkpoint header lacks trained_steps");
    const int64_t v = header["trained_steps"].get<int64_t>();
    if (v < 0) throw std::runtime_error("checkpoint has negative trained_steps");
    return v;
}

std::string read_kind(const json& header) {
    if (!header.contains("kind"))
        throw std::runtime_error("checkpoint header lacks a kind field");
    return header["kind"].get<std::string>();
}

}  // namespace

void save_encoder_checkpoint(const std::filesystem::path& path, Encoder<float>& encoder,
                             const EncoderConfig& config, int64_t trained_steps) {
    if (trained_steps < 0) throw std::invalid_argument("trained_steps must be >= 0");
    std::vector<nn::NamedParam<float>> params;
    encoder.params(params);
    ordered_json header;
    header["kind"] = "encoder";
    header["trained_steps"] = trained_steps;
    header["encoder_config"] = encoder_config_json(config);
    header["tensors"] = tensor_index(params);
    atomic_write_bytes(path, assemble(header, params));
}

EncoderCheckpoint load_encoder_checkpoint(const std::filesystem::path& path) {
    const Parsed p = parse_archive(path);
    const std::string kind = read_kind(p.header);
    if (kind != "encoder")
        throw std::runtime_error("expected an encoder checkpoint, found kind '" + kind + "'");
    EncoderCheckpoint ck;
    if (!p.header.contains("encoder_config"))
        throw std::runtime_error("checkpoint header lacks encoder_config");
    ck.config = encoder_config_parse(p.header["encoder_config"]);
    ck.trained_steps = read_trained_steps(p.header);
    ck.encoder = std::make_unique<Encoder<float>>(ck.config);
    std::vector<nn::NamedParam<float>> params;
    ck.encoder->params(params);
    load_tensors(p, params);
    return ck;
}

void save_joint_checkpoint(const std::filesystem::path& path, Encoder<float>& encoder,
                           const EncoderConfig& encoder_config, UNet<float>& unet,
                           const DenoiserConfig& denoiser_config, const ScheduleSpec& schedule,
                           int64_t trained_steps) {
    if (trained_steps < 0) throw std::invalid_argument("trained_steps must be >= 0");
    std::vector<nn::NamedParam<float>> params;
    encoder.params(params);
    unet.params(params);
    ordered_json header;
    header["kind"] = "joint";
    header["trained_steps"] = trained_steps;
    header["encoder_config"] = encoder_config_json(encoder_config);
    header["denoiser_config"] = denoiser_config_json(denoiser_config);
    header["schedule"] = {{"steps", schedule.steps},
                          {"beta_start", schedule.beta_start},
                          {"beta_end", schedule.beta_end}};
    header["tensors"] = tensor_index(params);
    atomic_write_bytes(path, assemble(header, params));
}

JointCheckpoint load_joint_checkpoint(const std::filesystem::path& path) {
    const Parsed p = parse_archive(path);
    const std::string kind = read_kind(p.header);
    if (kind != "joint")
        throw std::runtime_error("expected a joint checkpoint, found kind '" + kind + "'");
    JointCheckpoint ck;
    if (!p.header.contains("encoder_config") || !p.header.contains("denoiser_config"))
        throw std::runtime_error("joint checkpoint header lacks a config section");
    ck.encoder_config = encoder_config_parse(p.header["encoder_config"]);
    ck.denoiser_config = denoiser_config_parse(p.header["denoiser_config"]);
    if (!p.header.contains("schedule"))
        throw std::runtime_error("joint checkpoint header lacks the noise schedule");
    const auto& s = p.header["schedule"];
    ck.schedule.steps = s.at("steps").get<int>();
    ck.schedule.beta_start = s.at("beta_start").get<double>();
    ck.schedule.beta_end = s.at("beta_end").get<double>();
    ck.schedule.build();  // validates endpoints
    ck.trained_steps = read_trained_steps(p.header);
    ck.encoder = std::make_unique<Encoder<float>>(ck.encoder_config);
    ck.unet = std::make_unique<UNet<float>>(ck.denoiser_config);
    std::vector<nn::NamedParam<float>> params;
    ck.encoder->params(params);
    ck.unet->params(params);
    load_tensors(p, params);
    return ck;
}

std::string checkpoint_kind(const std::filesystem::path& path) {
    return read_kind(parse_archive(path).header);
}

std::string encoder_config_to_json(const EncoderConfig& cfg) {
    return encoder_config_json(cfg).dump(2) + "\n";
}

EncoderConfig encoder_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument("encoder config: invalid JSON: " + std::string(e.what()));
    }
    return encoder_config_parse(j);
}

std::string denoiser_config_to_json(const DenoiserConfig& cfg) {
    return denoiser_config_json(cfg).dump(2) + "\n";
}

DenoiserConfig denoiser_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument("denoiser config: invalid JSON: " + std::string(e.what()));
    }
    return denoiser_config_parse(j);
}

}  // namespace uad
