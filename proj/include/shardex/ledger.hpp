#pragma once

#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "shardex/bytes.hpp"
#include "shardex/codec.hpp"
#include "shardex/crypto.hpp"
#include "shardex/errors.hpp"

namespace shardex {

using PartyId = std::string;
using LogicalTime = std::uint64_t;

// ---------------------------------------------------------------------------
// Event envelopes
// ---------------------------------------------------------------------------

// One hash-chained, signed unit of a manager's ledger. The signed region is
// (seq, prev_hash, payload_kind, payload, author); the record digest covers
// the signature as well, so any persisted bit is chained. Logical time is the
// sequence number; wall clocks never enter the signed or persisted state.
struct EventEnvelope {
    std::uint64_t seq = 0;
    crypto::Digest prev_hash{};
    std::string payload_kind;
    Bytes payload;
    PartyId author;
    Bytes signature;

    LogicalTime logical_time() const { return seq; }

    Bytes preimage() const;
    Bytes encode() const;
    crypto::Digest digest() const { return crypto::sha256(view_of(encode())); }

    static EventEnvelope decode(BytesView record);
    static Bytes preimage_for(std::uint64_t seq, const crypto::Digest& prev, std::string_view kind,
                              BytesView payload, const PartyId& author);
};

// ---------------------------------------------------------------------------
// Storage
// ---------------------------------------------------------------------------

// Append-only record storage with explicit durability barriers. Records are
// framed with a 4-byte big-endian length. flush() is the barrier; anything
// staged after the last flush is lost on a crash.
class Storage {
public:
    virtual ~Storage() = default;
    virtual void append_record(BytesView record) = 0;
    virtual void flush() = 0;
    virtual Bytes read_all() const = 0;     // everything written so far
    virtual Bytes read_durable() const = 0; // survives a crash
};

class MemStorage : public Storage {
public:
    void append_record(BytesView record) override;
    void flush() override { durable_ = data_.size(); }
    Bytes read_all() const override { return data_; }
    Bytes read_durable() const override { return Bytes(data_.begin(), data_.begin() + static_cast<long>(durable_)); }

    void crash() { data_.resize(durable_); } // drop unflushed suffix

private:
    Bytes data_;
    std::size_t durable_ = 0;
};

class FileStorage : public Storage {
public:
    explicit FileStorage(std::string path, bool fsync_on_flush = true);
    ~FileStorage() override;

    void append_record(BytesView record) override;
    void flush() override;
    Bytes read_all() const override;
    Bytes read_durable() const override { return read_all(); }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::FILE* file_ = nullptr;
    bool fsync_on_flush_ = true;
};

Bytes read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, BytesView data);

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

// Signature policy for appended envelopes. kEvery is the production setting;
// the relaxed settings exist for the throughput benchmark and weaken tamper
// attribution (the hash chain itself is always maintained).
enum class SealPolicy { kEvery, kEveryK, kNone };

// kEveryAppend is the production setting (one durability barrier per append);
// kEveryK relaxes crash guarantees and is meant for the benchmark.
enum class FlushPolicy { kEveryAppend, kEveryK, kManual };

struct LedgerConfig {
    SealPolicy seal = SealPolicy::kEvery;
    FlushPolicy flush = FlushPolicy::kEveryAppend;
    std::uint32_t interval = 1;      // K for the EveryK policies
    bool keep_entries = true;        // retain decoded envelopes in memory
};

struct AppendResult {
    std::uint64_t seq;
    crypto::Digest head_hash;
};

// Resolves the key a signature must verify against at append time. Returns
// nullopt for unknown, revoked or unverified authors.
using ActiveKeyFn = std::function<std::optional<Bytes>(const PartyId&)>;
// Authorization for appending a given payload kind, role-table backed.
using AuthorizeFn = std::function<bool(const PartyId&, std::string_view kind)>;
// All keys ever registered for a party, for verifying historical events
// across key rotations.
using KeyTimelineFn = std::function<std::vector<Bytes>(const PartyId&)>;

class Ledger {
public:
    using Signer = std::function<Bytes(BytesView)>;
    using Subscriber = std::function<void(const EventEnvelope&)>;

    Ledger(std::string ledger_id, std::unique_ptr<Storage> storage, LedgerConfig config = {});

    // Validating append: the signature must cover the canonical preimage of the
    // envelope that would be created, and verify against the author's active key.
    Expected<AppendResult> append(std::string_view kind, Bytes payload, const PartyId& author, Bytes signature);

    // Sealing append used by the owning manager: signs the preimage itself.
    // The author here is the manager's operator identity.
    Expected<AppendResult> append_sealed(std::string_view kind, Bytes payload, const PartyId& author,
                                         const Signer& sign);

    void set_active_key_fn(ActiveKeyFn fn) { active_key_ = std::move(fn); }
    void set_authorize_fn(AuthorizeFn fn) { authorize_ = std::move(fn); }

    const std::string& ledger_id() const { return id_; }
    std::uint64_t size() const { return next_seq_; }
    const EventEnvelope& at(std::uint64_t seq) const;
    const std::vector<EventEnvelope>& entries() const { return entries_; }
    crypto::Digest head_hash() const { return head_hash_; }

    // Delivers the backlog from from_seq inline, then every future append, in
    // seq order, exactly once per subscriber.
    Status subscribe(std::uint64_t from_seq, Subscriber sub);

    Storage& storage() { return *storage_; }
    const Storage& storage() const { return *storage_; }
    void flush() { storage_->flush(); }

    // Rebuild from storage. Decodes and re-chains; optional full verification.
    static std::unique_ptr<Ledger> load(std::string ledger_id, std::unique_ptr<Storage> storage,
                                        LedgerConfig config = {});

private:
    Expected<AppendResult> commit_envelope(EventEnvelope env);

    std::string id_;
    std::unique_ptr<Storage> storage_;
    LedgerConfig config_;
    std::vector<EventEnvelope> entries_;
    std::uint64_t next_seq_ = 0;
    crypto::Digest head_hash_{};
    std::uint64_t appends_since_flush_ = 0;
    std::vector<Subscriber> subscribers_;

    ActiveKeyFn active_key_;
    AuthorizeFn authorize_;
};

// ---------------------------------------------------------------------------
// Chain verification and replay
// ---------------------------------------------------------------------------

struct VerifyReport {
    bool ok = false;
    std::optional<std::uint64_t> first_bad_seq;
    std::uint64_t entries_checked = 0;
    bool truncated_tail = false; // trailing partial record: valid prefix, warn
    std::string note;
};

// Walks raw ledger bytes: dense seqs, hash links, and (unless relaxed)
// signature verification across each author's full key timeline. A whole-record
// prefix of a valid chain is itself valid; a trailing partial record is
// reported as a truncation warning, not corruption.
VerifyReport verify_chain_bytes(BytesView data, const KeyTimelineFn& keys, bool require_signatures = true);

VerifyReport verify_chain_entries(const std::vector<EventEnvelope>& entries, const KeyTimelineFn& keys,
                                  bool require_signatures = true);

std::vector<EventEnvelope> decode_records(BytesView data, bool* truncated_tail = nullptr);

// spec-shaped pure fold for tests and generic replay
template <typename State>
struct Reducer {
    State init;
    std::function<State(State, const EventEnvelope&)> step;
};

template <typename State>
State replay(const std::vector<EventEnvelope>& entries, const Reducer<State>& reducer) {
    State s = reducer.init;
    for (const auto& e : entries) s = reducer.step(std::move(s), e);
    return s;
}

} // namespace shardex
