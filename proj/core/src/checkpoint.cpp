#include "mapn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mapn/error.hpp"
#include "mapn/random.hpp"

namespace mapn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'A', 'P', 'N', 'C', 'K', 'P', 'T'};

class Writer {
public:
    template <typename T>
    void pod(T v)
    {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        bytes_.append(buf, sizeof(T));
    }
    void str(const std::string& s)
    {
        pod<std::uint64_t>(s.size());
        bytes_ += s;
    }
    void tensor(const Tensor& t)
    {
        pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) pod<std::int64_t>(d);
        bytes_.append(reinterpret_cast<const char*>(t.ptr()), t.size() * sizeof(double));
    }
    std::string& bytes() { return bytes_; }

private:
    std::string bytes_;
};

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T pod()
    {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str()
    {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    Tensor tensor()
    {
        const auto rank = pod<std::uint32_t>();
        if (rank > 8) throw DataError("checkpoint: implausible tensor rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) {
            d = pod<std::int64_t>();
            if (d < 0) throw DataError("checkpoint: negative extent");
        }
        const auto n = static_cast<std::size_t>(numel(shape));
        need(n * sizeof(double));
        std::vector<double> data(n);
        std::memcpy(data.data(), bytes_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return Tensor(std::move(shape), std::move(data));
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const
    {
        if (bytes_.size() - pos_ < n) throw DataError("checkpoint: truncated file");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    Writer w;
    w.bytes().append(kMagic, sizeof kMagic);
    w.pod<std::uint32_t>(Checkpoint::kVersion);
    w.str(ckpt.config);
    w.str(ckpt.metadata);
    w.pod<std::uint64_t>(ckpt.tensors.size());
    for (const auto& r : ckpt.tensors) {
        w.str(r.key);
        w.str(r.partition);
        w.str(to_string(r.role));
        w.tensor(r.value);
    }
    w.pod<std::uint64_t>(ckpt.adam.size());
    for (const auto& [key, slot] : ckpt.adam) {
        w.str(key);
        w.pod<std::int64_t>(slot.step);
        w.tensor(slot.m);
        w.tensor(slot.v);
    }
    w.pod<std::uint64_t>(fnv1a(w.bytes()));

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + tmp);
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) throw DataError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    if (bytes.size() < sizeof kMagic + 12 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw DataError(path.string() + " is not a checkpoint");
    }
    const auto body = std::string_view(bytes).substr(0, bytes.size() - 8);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body.size(), 8);
    if (fnv1a(body) != stored) throw DataError("checkpoint " + path.string() + " failed its checksum");

    Reader r(body.substr(sizeof kMagic));
    const auto version = r.pod<std::uint32_t>();
    if (version != Checkpoint::kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config = r.str();
    ckpt.metadata = r.str();
    const auto n = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
        TensorRecord rec;
        rec.key = r.str();
        rec.partition = r.str();
        rec.role = param_role_from_string(r.str());
        rec.value = r.tensor();
        ckpt.tensors.push_back(std::move(rec));
    }
    const auto slots = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < slots; ++i) {
        auto key = r.str();
        AdamSlot slot;
        slot.step = r.pod<std::int64_t>();
        slot.m = r.tensor();
        slot.v = r.tensor();
        ckpt.adam.emplace(std::move(key), std::move(slot));
    }
    if (!r.done()) throw DataError("checkpoint has trailing bytes");
    return ckpt;
}

std::vector<TensorRecord> snapshot_tensors(const Model& model)
{
    std::vector<TensorRecord> out;
    model.registry().for_each([&](const Parameter& p) { out.push_back({p.key, p.partition, p.role, p.value}); });
    return out;
}

void restore_tensors(Model& model, const std::vector<TensorRecord>& records)
{
    std::map<std::string, const TensorRecord*> by_key;
    for (const auto& r : records) by_key[r.key] = &r;
    std::string diff;
    model.registry().for_each([&](const Parameter& p) {
        auto it = by_key.find(p.key);
        if (it == by_key.end()) {
            diff += "  missing " + p.key + "\n";
        } else if (it->second->value.shape() != p.value.shape()) {
            diff += "  " + p.key + ": model " + to_string(p.value.shape()) + " vs checkpoint " +
                    to_string(it->second->value.shape()) + "\n";
        } else if (it->second->partition != p.partition) {
            diff += "  " + p.key + ": partition " + p.partition + " vs " + it->second->partition + "\n";
        }
    });
    if (by_key.size() != records.size()) diff += "  duplicate keys in checkpoint\n";
    if (!diff.empty()) throw ConfigError("checkpoint does not match model:\n" + diff);
    model.registry().for_each([&](Parameter& p) { p.value = by_key.at(p.key)->value; });
}

}  // namespace mapn
