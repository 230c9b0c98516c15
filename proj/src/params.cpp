#include "cgt/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cgt {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

void ParamStore::zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
}

void Adam::step(ParamStore& params) {
    for (const auto& [name, t] : params.entries()) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) {
            if (!std::isfinite(g)) throw NonFiniteGradient(name);
        }
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (auto& [name, t] : params.entries()) {
        if (!t.has_grad()) continue;
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) {
            m.assign(t.numel(), 0.0);
            v.assign(t.numel(), 0.0);
        }
        auto data = t.mutable_data();
        auto grad = t.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::restore(std::int64_t steps, std::map<std::string, std::vector<double>> m,
                   std::map<std::string, std::vector<double>> v) {
    step_count_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

namespace {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
        if (!in_) throw FormatError("cannot open archive " + path.string(), 0);
    }

    template <typename T>
    T get(const char* what) {
        T value{};
        in_.read(reinterpret_cast<char*>(&value), sizeof(T));
        if (in_.gcount() != static_cast<std::streamsize>(sizeof(T))) {
            throw FormatError(std::string("truncated archive while reading ") + what, offset_);
        }
        offset_ += sizeof(T);
        return value;
    }

    void bytes(char* dst, std::size_t n, const char* what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n)) {
            throw FormatError(std::string("truncated archive while reading ") + what, offset_);
        }
        offset_ += n;
    }

    std::uint64_t offset() const { return offset_; }
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    std::ifstream in_;
    std::uint64_t offset_ = 0;
};

}  // namespace

void write_archive(const std::filesystem::path& path, const std::vector<ArchiveRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write archive " + path.string());
    out.write(kArchiveMagic, 4);
    put<std::uint8_t>(out, kArchiveVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        if (numel_of(r.shape) != r.values.size()) {
            throw DimensionError("archive record '" + r.name + "' shape does not match its values");
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
        for (auto d : r.shape) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(r.values.data()),
                  static_cast<std::streamsize>(r.values.size() * sizeof(double)));
    }
    out.flush();
    if (!out) throw std::runtime_error("write failed for archive " + path.string() + " (disk full?)");
}

std::vector<ArchiveRecord> read_archive(const std::filesystem::path& path) {
    Reader in(path);
    char magic[4];
    in.bytes(magic, 4, "magic");
    if (std::memcmp(magic, kArchiveMagic, 4) != 0) throw FormatError("bad archive magic", 0);
    const auto version = in.get<std::uint8_t>("version");
    if (version != kArchiveVersion) {
        throw FormatError("unsupported archive version " + std::to_string(version), 4);
    }
    const auto count = in.get<std::uint32_t>("record count");
    std::vector<ArchiveRecord> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ArchiveRecord r;
        const auto name_len = in.get<std::uint32_t>("name length");
        if (name_len > 4096) throw FormatError("implausible record name length", in.offset() - 4);
        r.name.resize(name_len);
        in.bytes(r.name.data(), name_len, "record name");
        const auto rank = in.get<std::uint32_t>("rank");
        if (rank > 8) throw FormatError("implausible rank for '" + r.name + "'", in.offset() - 4);
        for (std::uint32_t k = 0; k < rank; ++k) r.shape.push_back(in.get<std::uint64_t>("dimension"));
        const auto n = numel_of(r.shape);
        if (n > (std::uint64_t{1} << 32)) throw FormatError("implausible size for '" + r.name + "'", in.offset());
        r.values.resize(n);
        in.bytes(reinterpret_cast<char*>(r.values.data()), n * sizeof(double), "record values");
        records.push_back(std::move(r));
    }
    if (!in.at_end()) throw FormatError("trailing bytes after last record", in.offset());
    return records;
}

}  // namespace cgt
