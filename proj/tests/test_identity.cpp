#include <doctest.h>

#include <random>

#include "shardex/identity.hpp"

using namespace shardex;

namespace {

IdentityManager::OperatorConfig test_operator() {
    return {"op", "Market Operator ApS", {Role::MarketOperator}, crypto::keypair_from_string_seed("op-keys")};
}

struct Registrant {
    PartyId id;
    crypto::Keypair keys;
};

Registrant register_ok(IdentityManager& mgr, const std::string& id, std::set<Role> roles,
                       const std::string& seed_tag = "") {
    Registrant r{id, crypto::keypair_from_string_seed(seed_tag.empty() ? "party-" + id : seed_tag)};
    Bytes intent = IdentityManager::registration_intent(id, "Legal " + id, roles, view_of(r.keys.public_key));
    Bytes sig = crypto::sign(view_of(intent), view_of(r.keys.secret_key));
    auto res = mgr.register_party(id, "Legal " + id, roles, r.keys.public_key, sig);
    REQUIRE(res.ok());
    REQUIRE(res.value() == id);
    return r;
}

} // namespace

TEST_CASE("registration grants role-based authorization") {
    auto mgr = IdentityManager::create(test_operator(), std::make_unique<MemStorage>());
    register_ok(*mgr, "farmer-a", {Role::Issuer});

    CHECK(mgr->authorize("farmer-a", ActionKind::IssueInstrument));
    CHECK(!mgr->authorize("farmer-a", ActionKind::MonitorQuery));
    CHECK(mgr->party("farmer-a")->kyc == KycStatus::Verified);
}

TEST_CASE("empty role set is rejected") {
    auto mgr = IdentityManager::create(test_operator(), std::make_unique<MemStorage>());
    crypto::Keypair k = crypto::keypair_from_string_seed("x");
    Bytes intent = IdentityManager::registration_intent("x", "X", {}, view_of(k.public_key));
    auto res = mgr->register_party("x", "X", {}, k.public_key, crypto::sign(view_of(intent), view_of(k.secret_key)));
    CHECK(!res.ok());
}

TEST_CASE("duplicate ids rejected, distinct registrations coexist") {
    auto mgr = IdentityManager::create(test_operator(), std::make_unique<MemStorage>());
    register_ok(*mgr, "a", {Role::Investor});
    register_ok(*mgr, "b", {Role::Investor});
    CHECK(mgr->parties().size() == 3); // op + a + b

    crypto::Keypair k = crypto::keypair_from_string_seed("dup");
    Bytes intent = IdentityManager::registration_intent("a", "A2", {Role::Investor}, view_of(k.public_key));
    auto res = mgr->register_party("a", "A2", {Role::Investor}, k.public_key,
                                   crypto::sign(view_of(intent), view_of(k.secret_key)));
    REQUIRE(!res.ok());
    CHECK(res.error().code == Errc::DuplicateParty);
}

TEST_CASE("role table matches the domain examples") {
    CHECK(!role_permits(Role::Investor, ActionKind::IssueInstrument));
    CHECK(role_permits(Role::VerificationAgent, ActionKind::SubmitObservation));
    CHECK(role_permits(Role::CalculationAgent, ActionKind::SubmitObservation));
    CHECK(role_permits(Role::Supervisor, ActionKind::MonitorQuery));
    CHECK(role_permits(Role::Investor, ActionKind::SubmitOrder));
    CHECK(!role_permits(Role::VerificationAgent, ActionKind::Transfer));
}

TEST_CASE("key rotation: new key signs, revoked key does not") {
    auto mgr = IdentityManager::create(test_operator(), std::make_unique<MemStorage>());
    Registrant a = register_ok(*mgr, "a", {Role::Investor});

    crypto::Keypair nk = crypto::keypair_from_string_seed("a-new");
    Bytes intent = IdentityManager::rotation_intent("a", view_of(nk.public_key));
    auto rec = mgr->rotate_key("a", nk.public_key, crypto::sign(view_of(intent), view_of(a.keys.secret_key)));
    REQUIRE(rec.ok());
    CHECK(mgr->active_key("a").value() == nk.public_key);

    // signing with the revoked key no longer validates
    Bytes msg = to_bytes("hello");
    Bytes old_sig = crypto::sign(view_of(msg), view_of(a.keys.secret_key));
    CHECK(!crypto::verify(view_of(msg), view_of(old_sig), view_of(mgr->active_key("a").value())));

    // rotating again with the stale key fails
    crypto::Keypair nk2 = crypto::keypair_from_string_seed("a-new-2");
    Bytes intent2 = IdentityManager::rotation_intent("a", view_of(nk2.public_key));
    auto bad = mgr->rotate_key("a", nk2.public_key, crypto::sign(view_of(intent2), view_of(a.keys.secret_key)));
    REQUIRE(!bad.ok());
    CHECK(bad.error().code == Errc::InactiveOldKey);
}

TEST_CASE("identity ledger verifies across a rotation via the key timeline") {
    auto mgr = IdentityManager::create(test_operator(), std::make_unique<MemStorage>());
    Registrant a = register_ok(*mgr, "a", {Role::Investor});
    crypto::Keypair nk = crypto::keypair_from_string_seed("a-new");
    Bytes intent = IdentityManager::rotation_intent("a", view_of(nk.public_key));
    REQUIRE(mgr->rotate_key("a", nk.public_key, crypto::sign(view_of(intent), view_of(a.keys.secret_key))).ok());
    register_ok(*mgr, "b", {Role::Investor});

    KeyTimelineFn timeline = [&](const PartyId& p) { return mgr->key_timeline(p); };
    auto rep = verify_chain_entries(mgr->ledger().entries(), timeline);
    CHECK(rep.ok);
    CHECK(rep.entries_checked == mgr->ledger().size());
    CHECK(mgr->key_timeline("a").size() == 2);
}

TEST_CASE("revoked kyc blocks authorization and authorship") {
    auto mgr = IdentityManager::create(test_operator(), std::make_unique<MemStorage>());
    register_ok(*mgr, "a", {Role::Investor});
    REQUIRE(mgr->revoke_kyc("a").ok());
    CHECK(!mgr->authorize("a", ActionKind::SubmitOrder));
    CHECK(!mgr->active_key("a").has_value());
}

TEST_CASE("restore from durable ledger reproduces state byte-identically") {
    auto storage = std::make_unique<MemStorage>();
    MemStorage* mem = storage.get();
    auto mgr = IdentityManager::create(test_operator(), std::move(storage));
    Registrant a = register_ok(*mgr, "a", {Role::Investor});
    register_ok(*mgr, "b", {Role::Issuer, Role::Investor});
    crypto::Keypair nk = crypto::keypair_from_string_seed("a-new");
    Bytes intent = IdentityManager::rotation_intent("a", view_of(nk.public_key));
    REQUIRE(mgr->rotate_key("a", nk.public_key, crypto::sign(view_of(intent), view_of(a.keys.secret_key))).ok());

    auto copy = std::make_unique<MemStorage>();
    for (const auto& e : decode_records(view_of(mem->read_durable()))) copy->append_record(view_of(e.encode()));
    copy->flush();
    auto restored = IdentityManager::restore(test_operator(), std::move(copy));

    CHECK(restored->encode_state() == mgr->encode_state());
    CHECK(restored->active_key("a").value() == nk.public_key);
}

TEST_CASE("unregistered or revoked authors never enter a ledger (fuzz)") {
    auto mgr = IdentityManager::create(test_operator(), std::make_unique<MemStorage>());
    register_ok(*mgr, "good", {Role::Investor});
    REQUIRE(mgr->revoke_kyc("good").ok());

    auto target = std::make_unique<Ledger>("t", std::make_unique<MemStorage>(), LedgerConfig{});
    target->set_active_key_fn([&](const PartyId& p) { return mgr->active_key(p); });

    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; i++) {
        PartyId author = (rng() % 2) ? "ghost-" + std::to_string(rng() % 5) : "good";
        crypto::Keypair k = crypto::keypair_from_string_seed("fuzz-" + std::to_string(rng()));
        Bytes payload = to_bytes("p");
        Bytes pre = EventEnvelope::preimage_for(target->size(), target->head_hash(), "note", view_of(payload), author);
        auto res = target->append("note", payload, author, crypto::sign(view_of(pre), view_of(k.secret_key)));
        CHECK(!res.ok());
    }
    CHECK(target->size() == 0);
}
