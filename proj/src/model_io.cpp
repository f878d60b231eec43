#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "iart/lstm.hpp"

// Model container layout:
//   "iart-model/1\n"
//   u64 payload length (little endian)
//   payload: u32 metadata length, metadata JSON, tensors as little-endian f64
//            (w row-major, b, w_y, b_y)
//   u64 FNV-1a checksum of the payload

namespace iart {

namespace {

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw ModelFormatError("model file: unexpected end of payload");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const LstmModel& m) {
    const Params& p = m.params;
    nlohmann::json meta{{"schema", kModelSchema},
                        {"hidden_size", p.hidden_size},
                        {"input_size", p.input_size},
                        {"window_length", m.window_length},
                        {"scaler", m.scaler},
                        {"training",
                         {{"config", m.info.config},
                          {"windows", m.info.windows},
                          {"total_weight", m.info.total_weight},
                          {"final_loss", m.info.final_loss},
                          {"epoch_loss", m.info.epoch_loss}}},
                        {"tensors",
                         {{{"name", "w"}, {"shape", {p.w.rows(), p.w.cols()}}},
                          {{"name", "b"}, {"shape", {p.b.size()}}},
                          {{"name", "w_y"}, {"shape", {p.w_y.size()}}},
                          {{"name", "b_y"}, {"shape", nlohmann::json::array()}}}}};
    const std::string meta_text = meta.dump();

    std::string payload;
    put_u32(payload, static_cast<std::uint32_t>(meta_text.size()));
    payload += meta_text;
    for (Eigen::Index r = 0; r < p.w.rows(); ++r)
        for (Eigen::Index c = 0; c < p.w.cols(); ++c) put_f64(payload, p.w(r, c));
    for (Eigen::Index i = 0; i < p.b.size(); ++i) put_f64(payload, p.b[i]);
    for (Eigen::Index i = 0; i < p.w_y.size(); ++i) put_f64(payload, p.w_y[i]);
    put_f64(payload, p.b_y);

    std::string out = std::string(kModelSchema) + "\n";
    put_u64(out, payload.size());
    out += payload;
    put_u64(out, fnv1a(payload));
    return out;
}

LstmModel deserialize_model(const std::string& bytes) {
    const auto newline = bytes.find('\n');
    const std::string tag = bytes.substr(0, newline == std::string::npos ? std::min<std::size_t>(bytes.size(), 32) : newline);
    if (tag != kModelSchema) {
        if (tag.rfind("iart-model/", 0) == 0)
            throw ModelVersionMismatch("model file: schema '" + tag + "' is not supported (expected '" + kModelSchema + "')");
        throw ModelFormatError("model file: missing '" + std::string(kModelSchema) + "' schema tag");
    }
    Reader header(std::string_view(bytes).substr(newline + 1));
    if (header.remaining() < 8) throw ModelChecksumError("model file: truncated before payload length");
    const std::uint64_t length = header.u64();
    if (header.remaining() != length + 8)
        throw ModelChecksumError("model file: size mismatch (truncated or padded), expected " + std::to_string(length + 8) +
                                 " bytes after header, found " + std::to_string(header.remaining()));
    const std::string_view payload = header.take(length);
    if (header.u64() != fnv1a(payload)) throw ModelChecksumError("model file: checksum mismatch");

    Reader r(payload);
    const std::uint32_t meta_len = r.u32();
    const nlohmann::json meta = nlohmann::json::parse(r.take(meta_len));
    if (meta.at("schema") != kModelSchema) throw ModelVersionMismatch("model file: metadata schema mismatch");

    LstmModel m;
    m.params = Params::zeros(meta.at("hidden_size").get<int>(), meta.at("input_size").get<int>());
    m.window_length = meta.at("window_length").get<int>();
    m.scaler = meta.at("scaler").get<FeatureScaler>();
    const auto& tr = meta.at("training");
    m.info.config = tr.at("config").get<TrainConfig>();
    m.info.windows = tr.at("windows").get<std::size_t>();
    m.info.total_weight = tr.at("total_weight").get<double>();
    m.info.final_loss = tr.at("final_loss").get<double>();
    m.info.epoch_loss = tr.at("epoch_loss").get<std::vector<double>>();

    Params& p = m.params;
    for (Eigen::Index row = 0; row < p.w.rows(); ++row)
        for (Eigen::Index c = 0; c < p.w.cols(); ++c) p.w(row, c) = r.f64();
    for (Eigen::Index i = 0; i < p.b.size(); ++i) p.b[i] = r.f64();
    for (Eigen::Index i = 0; i < p.w_y.size(); ++i) p.w_y[i] = r.f64();
    p.b_y = r.f64();
    if (r.remaining() != 0) throw ModelFormatError("model file: trailing bytes in payload");
    if (!p.all_finite()) throw ModelFormatError("model file: non-finite parameters");
    return m;
}

void save_model(const LstmModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write model file '" + path.string() + "'");
    const std::string bytes = serialize_model(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing model file '" + path.string() + "'");
}

LstmModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_model(ss.str());
}

}  // namespace iart
