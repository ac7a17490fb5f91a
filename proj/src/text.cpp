#include "kdsm/text.hpp"

#include <cctype>
#include <cstring>
#include <fstream>

#include "kdsm/rng.hpp"

namespace kdsm {

namespace {

void write_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

bool read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(is.gcount()) == n;
}

std::uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    if (!read_bytes(is, b, 2)) throw ParseError("KEMB: truncated file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!read_bytes(is, b, 4)) throw ParseError("KEMB: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

float read_f32(std::istream& is) {
    const std::uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace

PromptSpec build_prompt(const std::string& species,
                        const std::string& keypoint_category) {
    if (species.empty())
        throw ValidationError("build_prompt: empty species identifier");
    if (keypoint_category.empty())
        throw ValidationError("build_prompt: empty keypoint category identifier");
    PromptSpec p;
    p.species = species;
    p.keypoint_category = keypoint_category;
    p.rendered = "The " + keypoint_category + " of a " + species + " in the photo.";
    return p;
}

const std::string& placeholder_prompt() {
    static const std::string s = "There is not the keypoint we are looking for.";
    return s;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Eigen::VectorXd synthetic_encode(const std::string& text, int dim,
                                 std::uint64_t seed) {
    if (dim < 8) throw ConfigError("synthetic_encode: dim must be >= 8");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
    std::vector<std::string> tokens = tokenize(text);
    if (tokens.empty()) tokens.push_back("");
    for (const std::string& tok : tokens) {
        SplitMix64 rng(mix_seed(fnv1a64(tok), seed));
        for (int i = 0; i < dim; ++i) sum[i] += rng.gaussian();
    }
    const double norm = sum.norm();
    if (norm < 1e-12) {
        sum.setZero();
        sum[0] = 1.0;
        return sum;
    }
    return sum / norm;
}

EmbeddingTable load_table(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("KEMB: cannot open " + path);
    char magic[4];
    if (!read_bytes(is, magic, 4) || std::memcmp(magic, "KEMB", 4) != 0)
        throw ParseError("KEMB: bad magic in " + path);
    const std::uint32_t version = read_u32(is);
    if (version != 1)
        throw ParseError("KEMB: unsupported version " + std::to_string(version));
    EmbeddingTable t;
    t.dim = static_cast<int>(read_u32(is));
    const std::uint32_t count = read_u32(is);
    unsigned char norm_flag;
    if (!read_bytes(is, &norm_flag, 1)) throw ParseError("KEMB: truncated file");
    t.normalized = norm_flag != 0;
    if (t.dim <= 0) throw ParseError("KEMB: non-positive dim");
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::uint16_t klen = read_u16(is);
        std::string key(klen, '\0');
        if (klen && !read_bytes(is, key.data(), klen))
            throw ParseError("KEMB: truncated file");
        Eigen::VectorXd v(t.dim);
        for (int i = 0; i < t.dim; ++i) v[i] = static_cast<double>(read_f32(is));
        if (!t.normalized) {
            const double n = v.norm();
            if (n > 0) v /= n;
        }
        if (!t.entries.emplace(std::move(key), std::move(v)).second)
            throw ParseError("KEMB: duplicate key in " + path);
    }
    return t;
}

void save_table(const EmbeddingTable& table, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("KEMB: cannot write " + path);
    os.write("KEMB", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<std::uint32_t>(table.dim));
    write_u32(os, static_cast<std::uint32_t>(table.entries.size()));
    const unsigned char flag = table.normalized ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&flag), 1);
    for (const auto& [key, vec] : table.entries) {
        if (key.size() > 0xffff)
            throw DataError("KEMB: key longer than 65535 bytes");
        if (vec.size() != table.dim)
            throw DataError("KEMB: entry width differs from table dim");
        write_u16(os, static_cast<std::uint16_t>(key.size()));
        os.write(key.data(), static_cast<std::streamsize>(key.size()));
        for (int i = 0; i < table.dim; ++i)
            write_f32(os, static_cast<float>(vec[i]));
    }
    if (!os) throw DataError("KEMB: write failed for " + path);
}

void TextSource::validate() const {
    if (dim < 8) throw ConfigError("text source: C0 must be >= 8");
    if (table && table->dim != dim)
        throw ConfigError("text source: table dim " + std::to_string(table->dim) +
                          " does not match configured C0 " + std::to_string(dim));
}

Eigen::VectorXd TextSource::encode(const std::string& text) const {
    validate();
    if (table) {
        auto it = table->entries.find(text);
        if (it != table->entries.end()) return it->second;
        if (!allow_synth_fallback)
            throw LookupError("embedding table has no entry for \"" + text +
                              "\" and synthetic fallback is disabled");
    }
    return synthetic_encode(text, dim, seed);
}

PromptBatch embed_batch(const std::vector<PromptSpec>& prompts,
                        const TextSource& source, int K) {
    if (static_cast<int>(prompts.size()) > K)
        throw CapacityError("embed_batch: " + std::to_string(prompts.size()) +
                            " prompts exceed capacity K=" + std::to_string(K));
    PromptBatch b;
    b.prompts = prompts;
    b.K = K;
    b.K_valid = static_cast<int>(prompts.size());
    b.raw = Tensor::zeros({K, source.dim});
    MatMap m = b.raw.mat2d();
    for (int i = 0; i < b.K_valid; ++i)
        m.row(i) = source.encode(prompts[static_cast<std::size_t>(i)].rendered).transpose();
    if (b.K_valid < K) {
        const Eigen::VectorXd ph = source.encode(placeholder_prompt());
        for (int i = b.K_valid; i < K; ++i) m.row(i) = ph.transpose();
    }
    return b;
}

} // namespace kdsm
