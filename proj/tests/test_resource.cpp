#include <doctest.h>

#include <random>

#include "test_fixtures.hpp"

using namespace shardex;
using namespace shardex::test;

namespace {

struct ResourceFixture {
    World w;
    std::unique_ptr<ResourceManager> rm;

    ResourceFixture() {
        w.add_party("mint", {Role::Issuer});
        w.add_party("A", {Role::Investor});
        w.add_party("B", {Role::Investor});
        rm = w.make_resource_manager("cur");
        REQUIRE(rm->register_resource("EUR", 2, "mint").ok());
        REQUIRE(rm->open_account("A", "EUR", 0).ok());
        REQUIRE(rm->open_account("B", "EUR", 0).ok());
    }

    void fund(const PartyId& p, Amount amount) { REQUIRE(do_issue(*rm, w, "EUR", p, amount, "mint").ok()); }
};

} // namespace

TEST_CASE("transfer conserves the total") {
    ResourceFixture fx;
    fx.fund("A", 150);
    fx.fund("B", 50);
    REQUIRE(do_transfer(*fx.rm, fx.w, "A", "B", "EUR", 100).ok());
    CHECK(fx.rm->account("A", "EUR")->available == 50);
    CHECK(fx.rm->account("B", "EUR")->available == 150);
    CHECK(fx.rm->circulating_totals()["EUR"] == 200);
    CHECK(fx.rm->total_supply("EUR") == 200);
}

TEST_CASE("transfer below the credit floor is rejected without state change") {
    ResourceFixture fx;
    fx.fund("A", 50);
    auto res = do_transfer(*fx.rm, fx.w, "A", "B", "EUR", 100);
    REQUIRE(!res.ok());
    CHECK(res.error().code == Errc::InsufficientBalance);
    CHECK(fx.rm->account("A", "EUR")->available == 50);
    CHECK(fx.rm->account("B", "EUR")->available == 0);
}

TEST_CASE("negative credit limit admits an overdraft down to the floor") {
    ResourceFixture fx;
    REQUIRE(fx.rm->open_account("A", "EUR", -100).ok());
    fx.fund("A", 50);
    REQUIRE(do_transfer(*fx.rm, fx.w, "A", "B", "EUR", 100).ok());
    CHECK(fx.rm->account("A", "EUR")->available == -50);
    CHECK(fx.rm->account("B", "EUR")->available == 100);
    CHECK(fx.rm->account("A", "EUR")->available >= fx.rm->account("A", "EUR")->credit_limit);

    // next euro over the floor is refused
    auto res = do_transfer(*fx.rm, fx.w, "A", "B", "EUR", 51);
    REQUIRE(!res.ok());
    CHECK(res.error().code == Errc::InsufficientBalance);
}

TEST_CASE("wrong author or bad signature never moves funds") {
    ResourceFixture fx;
    fx.fund("A", 100);
    TransferInstruction instr{"A", "B", "EUR", 10, ""};
    // B signing A's debit
    auto res = fx.rm->transfer(instr, "B", fx.w.party("B").sign(view_of(ResourceManager::transfer_intent(instr))));
    CHECK(!res.ok());
    // right author, tampered signature
    Bytes sig = fx.w.party("A").sign(view_of(ResourceManager::transfer_intent(instr)));
    sig[0] ^= 1;
    auto res2 = fx.rm->transfer(instr, "A", sig);
    REQUIRE(!res2.ok());
    CHECK(res2.error().code == Errc::BadSignature);
    CHECK(fx.rm->account("A", "EUR")->available == 100);
}

TEST_CASE("reserve holds funds and rejects cumulative over-reservation") {
    ResourceFixture fx;
    fx.fund("A", 100);
    auto r1 = do_reserve(*fx.rm, fx.w, "A", "EUR", 30);
    REQUIRE(r1.ok());
    CHECK(fx.rm->account("A", "EUR")->available == 70);
    CHECK(fx.rm->account("A", "EUR")->reserved == 30);

    auto r2 = do_reserve(*fx.rm, fx.w, "A", "EUR", 60);
    REQUIRE(r2.ok());
    auto r3 = do_reserve(*fx.rm, fx.w, "A", "EUR", 60);
    REQUIRE(!r3.ok());
    CHECK(r3.error().code == Errc::InsufficientBalance);
    CHECK(fx.rm->account("A", "EUR")->reserved == 90);
}

TEST_CASE("abort returns the account exactly to its pre-reserve state") {
    ResourceFixture fx;
    fx.fund("A", 100);
    Bytes before = fx.rm->encode_state();
    auto rid = do_reserve(*fx.rm, fx.w, "A", "EUR", 30);
    REQUIRE(rid.ok());
    REQUIRE(fx.rm->settle_reservation(rid.value(), SettleDecision::Abort).ok());
    CHECK(fx.rm->account("A", "EUR")->available == 100);
    CHECK(fx.rm->account("A", "EUR")->reserved == 0);
    CHECK(fx.rm->reservation(rid.value())->state == ReservationState::Returned);
}

TEST_CASE("commit moves the hold to the beneficiary and conserves the total") {
    ResourceFixture fx;
    fx.fund("A", 100);
    auto rid = do_reserve(*fx.rm, fx.w, "A", "EUR", 30);
    REQUIRE(rid.ok());
    auto st = fx.rm->settle_reservation(rid.value(), SettleDecision::Commit, PartyId("B"));
    REQUIRE(st.ok());
    CHECK(st.value() == ReservationState::Committed);
    CHECK(fx.rm->account("A", "EUR")->available == 70);
    CHECK(fx.rm->account("A", "EUR")->reserved == 0);
    CHECK(fx.rm->account("B", "EUR")->available == 30);
    CHECK(fx.rm->circulating_totals()["EUR"] == 100);
}

TEST_CASE("repeated identical settlement decision is a no-op; conflicting one errors") {
    ResourceFixture fx;
    fx.fund("A", 100);
    auto rid = do_reserve(*fx.rm, fx.w, "A", "EUR", 30);
    REQUIRE(rid.ok());
    REQUIRE(fx.rm->settle_reservation(rid.value(), SettleDecision::Commit, PartyId("B")).ok());
    auto again = fx.rm->settle_reservation(rid.value(), SettleDecision::Commit, PartyId("B"));
    REQUIRE(again.ok());
    CHECK(again.value() == ReservationState::Committed);
    CHECK(fx.rm->account("B", "EUR")->available == 30); // no double apply

    auto conflict = fx.rm->settle_reservation(rid.value(), SettleDecision::Abort);
    REQUIRE(!conflict.ok());
    CHECK(conflict.error().code == Errc::AlreadyTerminal);
}

TEST_CASE("issuance is issuer-only and is the only source of supply") {
    ResourceFixture fx;
    auto res = do_issue(*fx.rm, fx.w, "EUR", "A", 1000, "A"); // investor minting
    REQUIRE(!res.ok());
    CHECK(res.error().code == Errc::Unauthorized);

    fx.fund("A", 1000);
    CHECK(fx.rm->total_supply("EUR") == 1000);

    // oracle: fold the ledger; supply == sum of issuance events == circulating
    Amount issued = 0;
    for (const auto& env : fx.rm->ledger().entries()) {
        if (env.payload_kind == "res.issued") {
            Decoder d(view_of(env.payload));
            d.get_str();
            d.get_str();
            issued += d.get_i64();
        }
    }
    CHECK(issued == 1000);
    CHECK(fx.rm->circulating_totals()["EUR"] == issued);
}

TEST_CASE("reservation ttl sweep returns expired holds") {
    ResourceFixture fx;
    fx.fund("A", 100);
    auto rid = fx.rm->reserve("A", "EUR", 40, "A",
                              fx.w.party("A").sign(view_of(ResourceManager::reserve_intent("A", "EUR", 40))),
                              std::uint64_t{2});
    REQUIRE(rid.ok());
    CHECK(fx.rm->release_expired().empty()); // not due yet
    fx.fund("B", 1);
    fx.fund("B", 1);
    fx.fund("B", 1);
    auto released = fx.rm->release_expired();
    REQUIRE(released.size() == 1);
    CHECK(released[0] == rid.value());
    CHECK(fx.rm->account("A", "EUR")->available == 100);
}

// ---------------------------------------------------------------------------
// 2PC participation
// ---------------------------------------------------------------------------

TEST_CASE("prepare takes a pinned hold; abort releases it; commit applies it") {
    ResourceFixture fx;
    fx.fund("A", 150);

    std::vector<TxnAction> actions{{"cur", make_transfer_action(fx.w, "A", "B", "EUR", 100)}};
    Vote v = fx.rm->txn_prepare("t1", actions);
    REQUIRE(v.yes);
    CHECK(fx.rm->account("A", "EUR")->available == 50);
    CHECK(fx.rm->account("A", "EUR")->reserved == 100);

    REQUIRE(fx.rm->txn_abort("t1").ok());
    CHECK(fx.rm->account("A", "EUR")->available == 150);
    CHECK(fx.rm->account("A", "EUR")->reserved == 0);

    Vote v2 = fx.rm->txn_prepare("t2", actions);
    REQUIRE(v2.yes);
    REQUIRE(fx.rm->txn_commit("t2").ok());
    CHECK(fx.rm->account("A", "EUR")->available == 50);
    CHECK(fx.rm->account("B", "EUR")->available == 100);
    CHECK(fx.rm->circulating_totals()["EUR"] == 150);
}

TEST_CASE("prepare votes no on a credit floor violation, with no state change") {
    ResourceFixture fx;
    fx.fund("A", 50);
    Bytes before = fx.rm->encode_state();
    std::vector<TxnAction> actions{{"cur", make_transfer_action(fx.w, "A", "B", "EUR", 100)}};
    Vote v = fx.rm->txn_prepare("t1", actions);
    REQUIRE(!v.yes);
    CHECK(v.reason.code == Errc::InsufficientBalance);
    CHECK(fx.rm->encode_state() == before);
    CHECK(fx.rm->txn_state("t1") == TxnState::None);
}

TEST_CASE("duplicate commit is idempotent") {
    ResourceFixture fx;
    fx.fund("A", 150);
    std::vector<TxnAction> actions{{"cur", make_transfer_action(fx.w, "A", "B", "EUR", 100)}};
    REQUIRE(fx.rm->txn_prepare("t1", actions).yes);
    REQUIRE(fx.rm->txn_commit("t1").ok());
    Bytes after_first = fx.rm->encode_state();
    REQUIRE(fx.rm->txn_commit("t1").ok());
    CHECK(fx.rm->encode_state() == after_first);
    CHECK(fx.rm->account("B", "EUR")->available == 100);
}

TEST_CASE("commit without prepare reports a protocol violation") {
    ResourceFixture fx;
    auto res = fx.rm->txn_commit("never-prepared");
    REQUIRE(!res.ok());
    CHECK(res.error().code == Errc::UnknownTxn);
}

TEST_CASE("prepare then crash: replay restores the held pin and the txn stays in doubt") {
    World w;
    w.add_party("mint", {Role::Issuer});
    w.add_party("A", {Role::Investor});
    w.add_party("B", {Role::Investor});
    ResourceManager::Config cfg{"cur", "op", crypto::keypair_from_string_seed("world-op")};
    auto storage = std::make_unique<MemStorage>();
    MemStorage* mem = storage.get();
    auto rm = ResourceManager::create(cfg, *w.identity, std::move(storage));
    REQUIRE(rm->register_resource("EUR", 2, "mint").ok());
    REQUIRE(rm->open_account("A", "EUR", 0).ok());
    REQUIRE(do_issue(*rm, w, "EUR", "A", 150, "mint").ok());

    std::vector<TxnAction> actions{{"cur", make_transfer_action(w, "A", "B", "EUR", 100)}};
    REQUIRE(rm->txn_prepare("t-crash", actions).yes);
    Bytes live_state = rm->encode_state();

    // crash: unflushed suffix is empty (per-append flush), replay the log
    mem->crash();
    auto copy = std::make_unique<MemStorage>();
    for (const auto& e : decode_records(view_of(mem->read_durable()))) copy->append_record(view_of(e.encode()));
    copy->flush();
    auto recovered = ResourceManager::restore(cfg, *w.identity, std::move(copy));

    CHECK(recovered->encode_state() == live_state);
    CHECK(recovered->account("A", "EUR")->reserved == 100);
    auto in_doubt = recovered->in_doubt_txns();
    REQUIRE(in_doubt.size() == 1);
    CHECK(in_doubt[0] == "t-crash");
    CHECK(recovered->txn_manifest("t-crash") == std::vector<std::string>{"cur"});
}

// ---------------------------------------------------------------------------
// Properties
// ---------------------------------------------------------------------------

TEST_CASE("disjoint transfer batches commute") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 15; trial++) {
        auto build = [&]() {
            auto fx = std::make_unique<ResourceFixture>();
            fx->w.add_party("C", {Role::Investor});
            fx->w.add_party("D", {Role::Investor});
            REQUIRE(fx->rm->open_account("C", "EUR", 0).ok());
            REQUIRE(fx->rm->open_account("D", "EUR", 0).ok());
            fx->fund("A", 500);
            fx->fund("B", 500);
            fx->fund("C", 500);
            fx->fund("D", 500);
            return fx;
        };
        // batch1 touches {A,B}, batch2 touches {C,D}: disjoint account pairs
        std::vector<std::pair<PartyId, PartyId>> batch1, batch2;
        std::vector<Amount> amt1, amt2;
        for (int i = 0; i < 5; i++) {
            batch1.emplace_back(rng() % 2 ? "A" : "B", rng() % 2 ? "A" : "B");
            amt1.push_back(static_cast<Amount>(rng() % 80 + 1));
            batch2.emplace_back(rng() % 2 ? "C" : "D", rng() % 2 ? "C" : "D");
            amt2.push_back(static_cast<Amount>(rng() % 80 + 1));
        }
        auto run_batch = [&](ResourceFixture& fx, const auto& batch, const auto& amts) {
            for (std::size_t i = 0; i < batch.size(); i++) {
                if (batch[i].first == batch[i].second) continue;
                (void)do_transfer(*fx.rm, fx.w, batch[i].first, batch[i].second, "EUR", amts[i]);
            }
        };
        auto fx_ab = build();
        run_batch(*fx_ab, batch1, amt1);
        run_batch(*fx_ab, batch2, amt2);
        auto fx_ba = build();
        run_batch(*fx_ba, batch2, amt2);
        run_batch(*fx_ba, batch1, amt1);
        for (const PartyId p : {"A", "B", "C", "D"}) {
            CHECK(fx_ab->rm->account(p, "EUR")->available == fx_ba->rm->account(p, "EUR")->available);
        }
    }
}

TEST_CASE("floor and conservation hold under random interleavings, live == replay") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 10; trial++) {
        ResourceFixture fx;
        fx.w.add_party("C", {Role::Investor});
        REQUIRE(fx.rm->open_account("C", "EUR", -200).ok());
        fx.fund("A", 300);
        fx.fund("B", 300);
        Amount supply = 600;
        std::vector<std::string> live_rsv;

        for (int step = 0; step < 120; step++) {
            const PartyId names[] = {"A", "B", "C"};
            PartyId from = names[rng() % 3];
            PartyId to = names[rng() % 3];
            switch (rng() % 4) {
                case 0:
                    if (from != to) (void)do_transfer(*fx.rm, fx.w, from, to, "EUR", static_cast<Amount>(rng() % 150 + 1));
                    break;
                case 1: {
                    auto r = do_reserve(*fx.rm, fx.w, from, "EUR", static_cast<Amount>(rng() % 100 + 1));
                    if (r.ok()) live_rsv.push_back(r.value());
                    break;
                }
                case 2:
                    if (!live_rsv.empty()) {
                        std::size_t i = rng() % live_rsv.size();
                        (void)fx.rm->settle_reservation(live_rsv[i],
                                                        rng() % 2 ? SettleDecision::Abort : SettleDecision::Commit,
                                                        PartyId(names[rng() % 3]));
                    }
                    break;
                case 3:
                    if (rng() % 4 == 0) {
                        Amount a = static_cast<Amount>(rng() % 50 + 1);
                        if (do_issue(*fx.rm, fx.w, "EUR", to, a, "mint").ok()) supply += a;
                    }
                    break;
            }
            // floor invariant at every step
            for (const PartyId p : {"A", "B", "C"}) {
                const auto* acc = fx.rm->account(p, "EUR");
                if (acc) CHECK(acc->available >= acc->credit_limit);
            }
            CHECK(fx.rm->circulating_totals()["EUR"] == supply);
        }

        // replay equivalence from persisted bytes
        ResourceManager::Config cfg{"cur", "op", crypto::keypair_from_string_seed("world-op")};
        auto copy = std::make_unique<MemStorage>();
        for (const auto& e : decode_records(view_of(fx.rm->ledger().storage().read_durable()))) {
            copy->append_record(view_of(e.encode()));
        }
        copy->flush();
        auto replayed = ResourceManager::restore(cfg, *fx.w.identity, std::move(copy));
        CHECK(replayed->encode_state() == fx.rm->encode_state());
    }
}
