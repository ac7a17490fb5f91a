#include "kdsm/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace kdsm {

namespace {

const std::array<std::uint32_t, 256>& crc_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str16(const std::string& s) {
        if (s.size() > 0xffff) throw DataError("checkpoint: string too long");
        u16(static_cast<std::uint16_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void str32(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    const std::vector<unsigned char>& data() const { return buf_; }

private:
    std::vector<unsigned char> buf_;
};

class ByteReader {
public:
    ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
    std::uint8_t u8() { return take(1)[0]; }
    std::uint16_t u16() {
        const unsigned char* b = take(2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32() {
        const unsigned char* b = take(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    std::uint64_t u64() {
        const unsigned char* b = take(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str16() {
        const std::uint16_t len = u16();
        const unsigned char* b = take(len);
        return std::string(reinterpret_cast<const char*>(b), len);
    }
    std::string str32() {
        const std::uint32_t len = u32();
        const unsigned char* b = take(len);
        return std::string(reinterpret_cast<const char*>(b), len);
    }
    bool done() const { return off_ == n_; }

private:
    const unsigned char* take(std::size_t n) {
        if (off_ + n > n_) throw ParseError("checkpoint: truncated payload");
        const unsigned char* p = p_ + off_;
        off_ += n;
        return p;
    }
    const unsigned char* p_;
    std::size_t n_;
    std::size_t off_ = 0;
};

void write_grouping_section(ByteWriter& w, const Grouping& g) {
    w.bytes("KGRP", 4);
    const int O = g.n_groups();
    const int dim = O > 0 ? static_cast<int>(g.centroids.cols()) : 0;
    w.u32(static_cast<std::uint32_t>(O));
    w.u32(static_cast<std::uint32_t>(dim));
    for (int i = 0; i < O; ++i)
        for (int j = 0; j < dim; ++j) w.f64(g.centroids(i, j));
    w.u32(static_cast<std::uint32_t>(g.assignment.size()));
    for (const auto& [key, group] : g.assignment) {
        w.str16(key.first + "\x1f" + key.second);
        w.u32(static_cast<std::uint32_t>(group));
    }
}

Grouping read_grouping_section(ByteReader& r) {
    const unsigned char m0 = r.u8(), m1 = r.u8(), m2 = r.u8(), m3 = r.u8();
    if (m0 != 'K' || m1 != 'G' || m2 != 'R' || m3 != 'P')
        throw ParseError("grouping: bad section magic");
    Grouping g;
    const int O = static_cast<int>(r.u32());
    const int dim = static_cast<int>(r.u32());
    g.centroids = Mat::Zero(O, dim);
    for (int i = 0; i < O; ++i)
        for (int j = 0; j < dim; ++j) g.centroids(i, j) = r.f64();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::string key = r.str16();
        const auto sep = key.find('\x1f');
        if (sep == std::string::npos)
            throw ParseError("grouping: malformed assignment key");
        const int group = static_cast<int>(r.u32());
        g.assignment[{key.substr(0, sep), key.substr(sep + 1)}] = group;
    }
    return g;
}

void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
    w.str16(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < t.numel(); ++i) w.f64(t.data[i]);
}

std::pair<std::string, Tensor> read_tensor(ByteReader& r) {
    const std::string name = r.str16();
    const int rank = r.u8();
    std::vector<int> shape;
    for (int i = 0; i < rank; ++i) shape.push_back(static_cast<int>(r.u32()));
    Tensor t = Tensor::zeros(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = r.f64();
    return {name, std::move(t)};
}

} // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t n) {
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i)
        c = crc_table()[(c ^ data[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    ByteWriter payload;
    payload.str32(ck.config_json);
    payload.u8(ck.has_grouping ? 1 : 0);
    if (ck.has_grouping) write_grouping_section(payload, ck.grouping);
    payload.u32(static_cast<std::uint32_t>(ck.log_tail.size()));
    for (const std::string& line : ck.log_tail) payload.str32(line);
    payload.u32(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) write_tensor(payload, name, t);

    ByteWriter out;
    out.bytes("KCKP", 4);
    out.u32(ck.version);
    out.u32(crc32(payload.data().data(), payload.data().size()));
    out.u64(payload.data().size());
    out.bytes(payload.data().data(), payload.data().size());

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot write " + path);
    os.write(reinterpret_cast<const char*>(out.data().data()),
             static_cast<std::streamsize>(out.data().size()));
    if (!os) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    std::vector<unsigned char> all((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    if (all.size() < 20 || std::memcmp(all.data(), "KCKP", 4) != 0)
        throw ParseError("checkpoint: bad magic in " + path);
    ByteReader head(all.data() + 4, all.size() - 4);
    Checkpoint ck;
    ck.version = head.u32();
    if (ck.version != 1)
        throw ParseError("checkpoint: unsupported version " +
                         std::to_string(ck.version));
    const std::uint32_t stored_crc = head.u32();
    const std::uint64_t payload_len = head.u64();
    if (20 + payload_len != all.size())
        throw ParseError("checkpoint: truncated file " + path);
    const unsigned char* payload = all.data() + 20;
    if (crc32(payload, payload_len) != stored_crc)
        throw ChecksumError("checkpoint: checksum mismatch in " + path);

    ByteReader r(payload, payload_len);
    ck.config_json = r.str32();
    ck.has_grouping = r.u8() != 0;
    if (ck.has_grouping) ck.grouping = read_grouping_section(r);
    const std::uint32_t n_log = r.u32();
    for (std::uint32_t i = 0; i < n_log; ++i) ck.log_tail.push_back(r.str32());
    const std::uint32_t n_tensors = r.u32();
    for (std::uint32_t i = 0; i < n_tensors; ++i)
        ck.tensors.push_back(read_tensor(r));
    if (!r.done()) throw ParseError("checkpoint: trailing bytes in " + path);
    return ck;
}

void save_grouping(const Grouping& g, const std::string& path) {
    ByteWriter w;
    write_grouping_section(w, g);
    ByteWriter out;
    out.u32(crc32(w.data().data(), w.data().size()));
    out.bytes(w.data().data(), w.data().size());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("grouping: cannot write " + path);
    os.write(reinterpret_cast<const char*>(out.data().data()),
             static_cast<std::streamsize>(out.data().size()));
}

Grouping load_grouping(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("grouping: cannot open " + path);
    std::vector<unsigned char> all((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    if (all.size() < 8) throw ParseError("grouping: truncated " + path);
    ByteReader head(all.data(), all.size());
    const std::uint32_t stored_crc = head.u32();
    if (crc32(all.data() + 4, all.size() - 4) != stored_crc)
        throw ChecksumError("grouping: checksum mismatch in " + path);
    ByteReader r(all.data() + 4, all.size() - 4);
    return read_grouping_section(r);
}

void write_grouping_sidecar(const Grouping& g, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("grouping: cannot write " + path);
    os << "# species\tcategory\tgroup\n";
    for (const auto& [key, group] : g.assignment)
        os << key.first << "\t" << key.second << "\t" << group << "\n";
}

} // namespace kdsm
