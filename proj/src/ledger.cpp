#include "shardex/ledger.hpp"

#include <cerrno>
#include <cstring>
#include <filesystem>

#ifdef __unix__
#include <unistd.h>
#endif

namespace shardex {

// ---------------------------------------------------------------------------
// EventEnvelope
// ---------------------------------------------------------------------------

Bytes EventEnvelope::preimage_for(std::uint64_t seq, const crypto::Digest& prev, std::string_view kind,
                                  BytesView payload, const PartyId& author) {
    Encoder e;
    e.put_u64(seq);
    e.put_bytes(BytesView(prev.data(), prev.size()));
    e.put_str(kind);
    e.put_bytes(payload);
    e.put_str(author);
    return e.take();
}

Bytes EventEnvelope::preimage() const {
    return preimage_for(seq, prev_hash, payload_kind, view_of(payload), author);
}

Bytes EventEnvelope::encode() const {
    Bytes out = preimage();
    Encoder sig;
    sig.put_bytes(view_of(signature));
    const Bytes& tail = sig.bytes();
    out.insert(out.end(), tail.begin(), tail.end());
    return out;
}

EventEnvelope EventEnvelope::decode(BytesView record) {
    Decoder d(record);
    EventEnvelope env;
    env.seq = d.get_u64();
    Bytes prev = d.get_bytes();
    if (prev.size() != crypto::kDigestSize) throw DecodeError("prev_hash must be 32 bytes");
    std::copy(prev.begin(), prev.end(), env.prev_hash.begin());
    env.payload_kind = d.get_str();
    env.payload = d.get_bytes();
    env.author = d.get_str();
    env.signature = d.get_bytes();
    d.expect_end();
    return env;
}

// ---------------------------------------------------------------------------
// Storage
// ---------------------------------------------------------------------------

void MemStorage::append_record(BytesView record) {
    put_frame_len(data_, static_cast<std::uint32_t>(record.size()));
    data_.insert(data_.end(), record.begin(), record.end());
}

FileStorage::FileStorage(std::string path, bool fsync_on_flush)
    : path_(std::move(path)), fsync_on_flush_(fsync_on_flush) {
    if (auto dir = std::filesystem::path(path_).parent_path(); !dir.empty()) {
        std::filesystem::create_directories(dir);
    }
    file_ = std::fopen(path_.c_str(), "ab+");
    if (!file_) throw std::runtime_error("cannot open ledger file " + path_ + ": " + std::strerror(errno));
}

FileStorage::~FileStorage() {
    if (file_) {
        std::fflush(file_);
        std::fclose(file_);
    }
}

void FileStorage::append_record(BytesView record) {
    Bytes frame;
    frame.reserve(record.size() + 4);
    put_frame_len(frame, static_cast<std::uint32_t>(record.size()));
    frame.insert(frame.end(), record.begin(), record.end());
    if (std::fwrite(frame.data(), 1, frame.size(), file_) != frame.size()) {
        throw std::runtime_error("short write to ledger file " + path_);
    }
}

void FileStorage::flush() {
    if (std::fflush(file_) != 0) throw std::runtime_error("fflush failed for " + path_);
#ifdef __unix__
    if (fsync_on_flush_) fsync(fileno(file_));
#endif
}

Bytes FileStorage::read_all() const {
    std::fflush(file_);
    return read_file_bytes(path_);
}

Bytes read_file_bytes(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open file " + path + ": " + std::strerror(errno));
    Bytes out;
    std::uint8_t buf[1 << 16];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) out.insert(out.end(), buf, buf + n);
    std::fclose(f);
    return out;
}

void write_file_bytes(const std::string& path, BytesView data) {
    if (auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) {
        std::filesystem::create_directories(dir);
    }
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open file for write " + path + ": " + std::strerror(errno));
    if (data.size() > 0 && std::fwrite(data.data(), 1, data.size(), f) != data.size()) {
        std::fclose(f);
        throw std::runtime_error("short write to " + path);
    }
    std::fclose(f);
}

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

Ledger::Ledger(std::string ledger_id, std::unique_ptr<Storage> storage, LedgerConfig config)
    : id_(std::move(ledger_id)), storage_(std::move(storage)), config_(config) {}

const EventEnvelope& Ledger::at(std::uint64_t seq) const {
    if (!config_.keep_entries) throw std::runtime_error("ledger " + id_ + " does not retain entries");
    if (seq >= entries_.size()) throw std::out_of_range("seq out of range in ledger " + id_);
    return entries_[seq];
}

Expected<AppendResult> Ledger::append(std::string_view kind, Bytes payload, const PartyId& author,
                                      Bytes signature) {
    if (authorize_ && !authorize_(author, kind)) {
        return Error{Errc::Unauthorized, author + " may not append " + std::string(kind)};
    }
    std::optional<Bytes> key;
    if (active_key_) key = active_key_(author);
    if (active_key_ && !key) {
        return Error{Errc::Unauthorized, "no active key for " + author};
    }
    EventEnvelope env;
    env.seq = next_seq_;
    env.prev_hash = head_hash_;
    env.payload_kind = std::string(kind);
    env.payload = std::move(payload);
    env.author = author;
    env.signature = std::move(signature);
    if (key && !crypto::verify(view_of(env.preimage()), view_of(env.signature), view_of(*key))) {
        return Error{Errc::BadSignature, "envelope signature rejected for " + author};
    }
    return commit_envelope(std::move(env));
}

Expected<AppendResult> Ledger::append_sealed(std::string_view kind, Bytes payload, const PartyId& author,
                                             const Signer& sign) {
    if (authorize_ && !authorize_(author, kind)) {
        return Error{Errc::Unauthorized, author + " may not append " + std::string(kind)};
    }
    EventEnvelope env;
    env.seq = next_seq_;
    env.prev_hash = head_hash_;
    env.payload_kind = std::string(kind);
    env.payload = std::move(payload);
    env.author = author;
    bool seal = config_.seal == SealPolicy::kEvery ||
                (config_.seal == SealPolicy::kEveryK && config_.interval > 0 && next_seq_ % config_.interval == 0);
    if (seal) env.signature = sign(view_of(env.preimage()));
    return commit_envelope(std::move(env));
}

Expected<AppendResult> Ledger::commit_envelope(EventEnvelope env) {
    Bytes record = env.encode();
    storage_->append_record(view_of(record));
    appends_since_flush_++;
    if (config_.flush == FlushPolicy::kEveryAppend ||
        (config_.flush == FlushPolicy::kEveryK && appends_since_flush_ >= config_.interval)) {
        storage_->flush();
        appends_since_flush_ = 0;
    }
    head_hash_ = crypto::sha256(view_of(record));
    next_seq_ = env.seq + 1;
    AppendResult res{env.seq, head_hash_};
    if (config_.keep_entries) {
        entries_.push_back(std::move(env));
        for (const auto& sub : subscribers_) sub(entries_.back());
    } else if (!subscribers_.empty()) {
        for (const auto& sub : subscribers_) sub(env);
    }
    return res;
}

Status Ledger::subscribe(std::uint64_t from_seq, Subscriber sub) {
    if (from_seq > next_seq_) return Error{Errc::SeqOutOfRange, "subscribe past end of ledger " + id_};
    if (!config_.keep_entries && from_seq < next_seq_) {
        return Error{Errc::SeqOutOfRange, "backlog not retained for ledger " + id_};
    }
    for (std::uint64_t s = from_seq; s < next_seq_; ++s) sub(entries_[s]);
    subscribers_.push_back(std::move(sub));
    return ok_status();
}

std::unique_ptr<Ledger> Ledger::load(std::string ledger_id, std::unique_ptr<Storage> storage,
                                     LedgerConfig config) {
    Bytes data = storage->read_durable();
    auto ledger = std::make_unique<Ledger>(std::move(ledger_id), std::move(storage), config);
    bool truncated = false;
    ledger->entries_ = decode_records(view_of(data), &truncated);
    if (!ledger->entries_.empty()) {
        const EventEnvelope& last = ledger->entries_.back();
        ledger->next_seq_ = last.seq + 1;
        ledger->head_hash_ = last.digest();
    }
    if (!config.keep_entries) {
        // Size and head are still tracked; bodies are dropped.
        std::vector<EventEnvelope>().swap(ledger->entries_);
    }
    return ledger;
}

// ---------------------------------------------------------------------------
// Verification and replay
// ---------------------------------------------------------------------------

std::vector<EventEnvelope> decode_records(BytesView data, bool* truncated_tail) {
    std::vector<EventEnvelope> out;
    std::size_t pos = 0;
    if (truncated_tail) *truncated_tail = false;
    while (pos < data.size()) {
        if (pos + 4 > data.size()) {
            if (truncated_tail) *truncated_tail = true;
            break;
        }
        std::uint32_t len = read_frame_len(data, pos);
        if (pos + 4 + len > data.size()) {
            if (truncated_tail) *truncated_tail = true;
            break;
        }
        out.push_back(EventEnvelope::decode(data.subspan(pos + 4, len)));
        pos += 4 + len;
    }
    return out;
}

namespace {

// Trial verification across the author's whole key timeline: ledger envelopes
// carry no wall clock, so a historical envelope is accepted if any key ever
// registered for the author verifies it. Append-time enforcement of the
// active key is what keeps revoked keys from signing new events.
bool signature_on_timeline(const EventEnvelope& env, const KeyTimelineFn& keys) {
    Bytes pre = env.preimage();
    for (const Bytes& pk : keys(env.author)) {
        if (crypto::verify(view_of(pre), view_of(env.signature), view_of(pk))) return true;
    }
    return false;
}

VerifyReport verify_decoded(const std::vector<EventEnvelope>& entries, bool truncated,
                            const KeyTimelineFn& keys, bool require_signatures) {
    VerifyReport rep;
    rep.truncated_tail = truncated;
    crypto::Digest prev{};
    for (const EventEnvelope& env : entries) {
        if (env.seq != rep.entries_checked || env.prev_hash != prev) {
            rep.first_bad_seq = rep.entries_checked;
            rep.note = env.seq != rep.entries_checked ? "sequence gap" : "hash chain broken";
            return rep;
        }
        if (require_signatures && !signature_on_timeline(env, keys)) {
            rep.first_bad_seq = env.seq;
            rep.note = "signature does not verify for author " + env.author;
            return rep;
        }
        prev = env.digest();
        rep.entries_checked++;
    }
    rep.ok = true;
    if (truncated) rep.note = "trailing partial record ignored";
    return rep;
}

} // namespace

VerifyReport verify_chain_bytes(BytesView data, const KeyTimelineFn& keys, bool require_signatures) {
    bool truncated = false;
    std::vector<EventEnvelope> entries;
    std::size_t pos = 0;
    std::uint64_t idx = 0;
    // Decode record by record so a malformed body is pinpointed, not thrown.
    while (pos < data.size()) {
        if (pos + 4 > data.size()) {
            truncated = true;
            break;
        }
        std::uint32_t len = read_frame_len(data, pos);
        if (pos + 4 + len > data.size()) {
            truncated = true;
            break;
        }
        try {
            entries.push_back(EventEnvelope::decode(data.subspan(pos + 4, len)));
        } catch (const DecodeError&) {
            VerifyReport rep;
            rep.entries_checked = idx;
            rep.first_bad_seq = idx;
            rep.note = "undecodable record";
            return rep;
        }
        pos += 4 + len;
        idx++;
    }
    return verify_decoded(entries, truncated, keys, require_signatures);
}

VerifyReport verify_chain_entries(const std::vector<EventEnvelope>& entries, const KeyTimelineFn& keys,
                                  bool require_signatures) {
    return verify_decoded(entries, false, keys, require_signatures);
}

} // namespace shardex
