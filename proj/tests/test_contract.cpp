#include <doctest.h>

#include <random>

#include "shardex/contract.hpp"
#include "test_fixtures.hpp"

using namespace shardex;
using namespace shardex::test;

namespace {

LifecycleEvent obs_event(const std::string& isin, const PartyId& agent, const std::string& key,
                         std::int64_t value) {
    LifecycleEvent ev;
    ev.kind = LifecycleEvent::Kind::ObservationMade;
    ev.isin = isin;
    ev.key = key;
    ev.value = value;
    ev.author = agent;
    return ev;
}

LifecycleEvent pay_event(const std::string& isin, std::vector<TransferRef> transfers, const PartyId& author) {
    LifecycleEvent ev;
    ev.kind = LifecycleEvent::Kind::PaymentSettled;
    ev.isin = isin;
    ev.transfers = std::move(transfers);
    ev.author = author;
    return ev;
}

LifecycleEvent time_event(const std::string& isin, LogicalTime to, const PartyId& author) {
    LifecycleEvent ev;
    ev.kind = LifecycleEvent::Kind::TimeAdvanced;
    ev.isin = isin;
    ev.new_time = to;
    ev.author = author;
    return ev;
}

SpecPtr simple_payment(const PartyId& from, const PartyId& to, std::int64_t amount, LogicalTime deadline) {
    return spec_payment(PaymentAtom{from, PayTarget{false, to, ""}, "EUR", amount_lit(amount), deadline});
}

} // namespace

// ---------------------------------------------------------------------------
// Pure residuation
// ---------------------------------------------------------------------------

TEST_CASE("observation at the head of a sequence residuates to the tail and binds") {
    SpecPtr rest = simple_payment("issuer", "inv", 100, 20);
    SpecPtr spec = spec_seq(
        spec_observation(ObservationAtom{"V", "co2_tons", Predicate{Predicate::Kind::Ge, 1}, 10}), rest);

    auto r = residuate(spec, {}, obs_event("X", "V", "co2_tons", 5), 0);
    REQUIRE(r.has_value());
    CHECK(spec_equal(r->residual, rest));
    CHECK(r->bindings.at("co2_tons").value == 5);
}

TEST_CASE("sequence ordering: the payment cannot jump the observation") {
    SpecPtr spec = spec_seq(
        spec_observation(ObservationAtom{"V", "co2_tons", Predicate{Predicate::Kind::Ge, 1}, 10}),
        simple_payment("issuer", "inv", 100, 20));
    auto r = residuate(spec, {}, pay_event("X", {{"issuer", "inv", "EUR", 100}}, "issuer"), 0);
    CHECK(!r.has_value());
}

TEST_CASE("terminal contracts absorb nothing") {
    for (SpecPtr s : {spec_done(), spec_fail()}) {
        CHECK(!residuate(s, {}, obs_event("X", "V", "k", 1), 0));
        CHECK(!residuate(s, {}, pay_event("X", {}, "issuer"), 0));
        CHECK(!residuate(s, {}, time_event("X", 5, "op"), 0));
    }
}

TEST_CASE("observation match requires the designated agent and the predicate") {
    SpecPtr spec = spec_observation(ObservationAtom{"V", "co2", Predicate{Predicate::Kind::Ge, 3}, 10});
    CHECK(!residuate(spec, {}, obs_event("X", "C", "co2", 5), 0));  // wrong agent
    CHECK(!residuate(spec, {}, obs_event("X", "V", "co2", 2), 0));  // predicate fails
    CHECK(!residuate(spec, {}, obs_event("X", "V", "temp", 5), 0)); // wrong key
    CHECK(residuate(spec, {}, obs_event("X", "V", "co2", 3), 0).has_value());
}

TEST_CASE("both: an event matching the right branch leaves the left") {
    SpecPtr p1 = simple_payment("a", "b", 10, 10);
    SpecPtr p2 = simple_payment("c", "d", 20, 10);
    SpecPtr spec = spec_both(p1, p2);
    auto r = residuate(spec, {}, pay_event("X", {{"c", "d", "EUR", 20}}, "c"), 0);
    REQUIRE(r.has_value());
    CHECK(spec_equal(r->residual, p1)); // Both(P1, Done) normalizes to P1
}

TEST_CASE("choice commits to the leftmost matching branch") {
    // both branches match the same observation; an oracle run of each branch
    // alone pins what the composite must produce
    SpecPtr a = spec_seq(spec_observation(ObservationAtom{"V", "k", Predicate{}, 10}),
                         simple_payment("a", "left", 1, 20));
    SpecPtr b = spec_seq(spec_observation(ObservationAtom{"V", "k", Predicate{}, 10}),
                         simple_payment("a", "right", 2, 20));
    LifecycleEvent ev = obs_event("X", "V", "k", 7);

    auto alone_a = residuate(a, {}, ev, 0);
    auto alone_b = residuate(b, {}, ev, 0);
    REQUIRE(alone_a.has_value());
    REQUIRE(alone_b.has_value()); // oracle: both branches individually match

    auto r = residuate(spec_choice(a, b), {}, ev, 0);
    REQUIRE(r.has_value());
    CHECK(spec_equal(r->residual, alone_a->residual));
    CHECK(!spec_equal(r->residual, alone_b->residual));
}

TEST_CASE("time advancing past a deadline fails the atom and defaults the contract") {
    SpecPtr spec = simple_payment("a", "b", 100, 10);
    auto r = residuate(spec, {}, time_event("X", 11, "op"), 0);
    REQUIRE(r.has_value());
    CHECK(is_fail(r->residual));

    // advancing exactly to the deadline keeps it alive
    auto r2 = residuate(spec, {}, time_event("X", 10, "op"), 0);
    REQUIRE(r2.has_value());
    CHECK(!is_fail(r2->residual));

    // time must move strictly forward
    CHECK(!residuate(spec, {}, time_event("X", 5, "op"), 6).has_value());
}

TEST_CASE("expiring one choice branch leaves the other") {
    SpecPtr spec = spec_choice(simple_payment("a", "b", 100, 10), simple_payment("a", "b", 100, 20));
    auto r = residuate(spec, {}, time_event("X", 15, "op"), 0);
    REQUIRE(r.has_value());
    CHECK(!is_fail(r->residual));
    CHECK(r->residual->kind == SpecNode::Kind::Payment);
    CHECK(r->residual->payment.deadline == 20);
}

TEST_CASE("issuer notice matches an observation atom keyed by the tag") {
    SpecPtr spec = spec_choice(
        spec_seq(spec_observation(ObservationAtom{"issuer", "prepay", Predicate{}, 10}),
                 simple_payment("issuer", "inv", 1000, 12)),
        simple_payment("issuer", "inv", 50, 20));
    LifecycleEvent ev;
    ev.kind = LifecycleEvent::Kind::IssuerNotice;
    ev.isin = "X";
    ev.tag = "prepay";
    ev.author = "issuer";
    auto r = residuate(spec, {}, ev, 0);
    REQUIRE(r.has_value());
    CHECK(r->residual->kind == SpecNode::Kind::Payment);
    CHECK(r->residual->payment.deadline == 12); // committed to the prepayment branch
}

TEST_CASE("pro-rata split: floor shares, remainder by descending balance then id") {
    Bindings b;
    b["yield_0"] = ObservedValue{250, {{"inv1", 600000}, {"inv2", 400000}}};
    PaymentAtom p{"issuer", PayTarget{true, "", "yield_0"}, "EUR",
                  amount_div(amount_mul(amount_var("yield_0"), amount_lit(1000000)), amount_lit(kYieldScale)), 10};
    auto t = resolve_payment(p, b);
    REQUIRE(t.has_value());
    REQUIRE(t->size() == 2);
    CHECK((*t)[0] == TransferRef{"issuer", "inv1", "EUR", 15000});
    CHECK((*t)[1] == TransferRef{"issuer", "inv2", "EUR", 10000});

    // a remainder case: 100 split over 3:3:1
    Bindings b2;
    b2["k"] = ObservedValue{100, {{"a", 3}, {"b", 3}, {"c", 1}}};
    PaymentAtom p2{"i", PayTarget{true, "", "k"}, "EUR", amount_var("k"), 10};
    auto t2 = resolve_payment(p2, b2);
    REQUIRE(t2.has_value());
    // floor shares 42/42/14 leave remainder 2, assigned to a then b
    CHECK((*t2)[0].amount == 43);
    CHECK((*t2)[1].amount == 43);
    CHECK((*t2)[2].amount == 14);
    std::int64_t sum = 0;
    for (const auto& tr : *t2) sum += tr.amount;
    CHECK(sum == 100);
}

TEST_CASE("unresolvable and zero payments") {
    PaymentAtom p{"i", PayTarget{false, "x", ""}, "EUR", amount_var("unbound"), 10};
    CHECK(!resolve_payment(p, {}).has_value());

    // zero amount normalizes the atom away
    Bindings b;
    b["y"] = ObservedValue{0, {}};
    PaymentAtom zero{"i", PayTarget{false, "x", ""}, "EUR", amount_var("y"), 10};
    SpecPtr spec = spec_seq(spec_payment(zero), simple_payment("i", "x", 5, 20));
    SpecPtr n = normalize(spec, b);
    CHECK(n->kind == SpecNode::Kind::Payment);
    CHECK(eval_amount(n->payment.amount, b) == 5);
}

TEST_CASE("s-expression round trip is canonical") {
    GreenBondParams params{"issuer", "V", "C", "EUR", 1000000, 2, 1, {10, 20, 30}};
    auto bond = make_green_bond(params);
    REQUIRE(bond.ok());
    std::string text = spec_to_sexpr(bond.value());
    auto parsed = spec_from_sexpr(text);
    REQUIRE(parsed.ok());
    CHECK(spec_to_sexpr(parsed.value()) == text);

    CHECK(!spec_from_sexpr("(seq done").ok());
    CHECK(!spec_from_sexpr("nonsense").ok());
    CHECK(!spec_from_sexpr("(pay a b c 1 2) extra").ok());
}

TEST_CASE("random specs survive the serialization round trip") {
    std::mt19937_64 rng(31);
    std::function<SpecPtr(int)> gen = [&](int depth) -> SpecPtr {
        if (depth <= 0 || rng() % 4 == 0) {
            switch (rng() % 3) {
                case 0: return spec_done();
                case 1:
                    return spec_payment(PaymentAtom{"p" + std::to_string(rng() % 5),
                                                    rng() % 2 ? PayTarget{true, "", "k" + std::to_string(rng() % 3)}
                                                              : PayTarget{false, "q" + std::to_string(rng() % 5), ""},
                                                    "EUR", amount_lit(static_cast<std::int64_t>(rng() % 1000)),
                                                    rng() % 100});
                default:
                    return spec_observation(ObservationAtom{
                        "a" + std::to_string(rng() % 5), "key with spaces " + std::to_string(rng() % 3),
                        Predicate{static_cast<Predicate::Kind>(rng() % 4), static_cast<std::int64_t>(rng() % 50)},
                        rng() % 100});
            }
        }
        switch (rng() % 3) {
            case 0: return spec_seq(gen(depth - 1), gen(depth - 1));
            case 1: return spec_both(gen(depth - 1), gen(depth - 1));
            default: return spec_choice(gen(depth - 1), gen(depth - 1));
        }
    };
    for (int i = 0; i < 60; i++) {
        SpecPtr s = gen(4);
        auto parsed = spec_from_sexpr(spec_to_sexpr(s));
        REQUIRE(parsed.ok());
        CHECK(spec_equal(parsed.value(), s));
    }
}

TEST_CASE("validation rejects unbound variables and non-increasing deadlines") {
    // payment references a key never observed before it
    SpecPtr bad = spec_seq(spec_payment(PaymentAtom{"i", PayTarget{false, "x", ""}, "EUR", amount_var("y"), 5}),
                           spec_observation(ObservationAtom{"C", "y", Predicate{}, 10}));
    CHECK(!validate_spec(bad).ok());

    SpecPtr good = spec_seq(spec_observation(ObservationAtom{"C", "y", Predicate{}, 5}),
                            spec_payment(PaymentAtom{"i", PayTarget{false, "x", ""}, "EUR", amount_var("y"), 10}));
    CHECK(validate_spec(good).ok());

    SpecPtr bad_deadline = spec_seq(spec_observation(ObservationAtom{"C", "y", Predicate{}, 10}),
                                    spec_payment(PaymentAtom{"i", PayTarget{false, "x", ""}, "EUR", amount_lit(1), 10}));
    CHECK(!validate_spec(bad_deadline).ok());

    // a key bound inside a choice is not usable after it
    SpecPtr choice_bind =
        spec_seq(spec_choice(spec_observation(ObservationAtom{"C", "y", Predicate{}, 3}),
                             spec_observation(ObservationAtom{"C", "z", Predicate{}, 3})),
                 spec_payment(PaymentAtom{"i", PayTarget{false, "x", ""}, "EUR", amount_var("y"), 10}));
    CHECK(!validate_spec(choice_bind).ok());
}

TEST_CASE("isin validation with and without the check digit") {
    CHECK(validate_isin("GB0000000001"));
    CHECK(!validate_isin("short"));
    CHECK(!validate_isin("gb0000000001"));
    CHECK(!validate_isin("GB00000000!1"));
    CHECK(validate_isin("US0378331005", true));  // real, valid checksum
    CHECK(!validate_isin("US0378331006", true)); // perturbed check digit
    CHECK(!validate_isin("GB0000000001", true));
}

// ---------------------------------------------------------------------------
// Green bond template
// ---------------------------------------------------------------------------

TEST_CASE("one-coupon bond walks three period events then redemption") {
    GreenBondParams params{"issuer", "V", "C", "EUR", 1000000, 1, 1, {10, 20}};
    auto bond = make_green_bond(params);
    REQUIRE(bond.ok());

    Bindings b;
    SpecPtr s = bond.value();
    Bindings holders_b;
    LifecycleEvent e1 = obs_event("X", "V", "co2_tons_0", 5);
    e1.holders_snapshot = {{"inv1", 600000}, {"inv2", 400000}};
    auto r1 = residuate(s, b, e1, 0);
    REQUIRE(r1.has_value());

    LifecycleEvent e2 = obs_event("X", "C", "yield_0", 250);
    e2.holders_snapshot = {{"inv1", 600000}, {"inv2", 400000}};
    auto r2 = residuate(r1->residual, r1->bindings, e2, 0);
    REQUIRE(r2.has_value());

    // coupon: 250bp on 1,000,000 = 25,000, split 15,000/10,000
    auto pay = next_payment(r2->residual, r2->bindings);
    REQUIRE(pay.has_value());
    REQUIRE(pay->transfers.size() == 2);
    CHECK(pay->transfers[0] == TransferRef{"issuer", "inv1", "EUR", 15000});
    CHECK(pay->transfers[1] == TransferRef{"issuer", "inv2", "EUR", 10000});

    auto r3 = residuate(r2->residual, r2->bindings, pay_event("X", pay->transfers, "issuer"), 0);
    REQUIRE(r3.has_value());

    // redemption: notice observation then principal repayment
    LifecycleEvent e4 = obs_event("X", "C", "redeem", 0);
    e4.holders_snapshot = {{"inv1", 600000}, {"inv2", 400000}};
    auto r4 = residuate(r3->residual, r3->bindings, e4, 0);
    REQUIRE(r4.has_value());
    auto redemption = next_payment(r4->residual, r4->bindings);
    REQUIRE(redemption.has_value());
    CHECK(redemption->transfers[0].amount == 600000);
    CHECK(redemption->transfers[1].amount == 400000);
    auto r5 = residuate(r4->residual, r4->bindings, pay_event("X", redemption->transfers, "issuer"), 0);
    REQUIRE(r5.has_value());
    CHECK(is_done(r5->residual));
}

TEST_CASE("zero yield auto-satisfies the coupon payment") {
    GreenBondParams params{"issuer", "V", "C", "EUR", 1000000, 1, 1, {10, 20}};
    auto bond = make_green_bond(params);
    REQUIRE(bond.ok());
    LifecycleEvent e1 = obs_event("X", "V", "co2_tons_0", 5);
    e1.holders_snapshot = {{"inv1", 1}};
    auto r1 = residuate(bond.value(), {}, e1, 0);
    REQUIRE(r1.has_value());
    LifecycleEvent e2 = obs_event("X", "C", "yield_0", 0);
    e2.holders_snapshot = {{"inv1", 1}};
    auto r2 = residuate(r1->residual, r1->bindings, e2, 0);
    REQUIRE(r2.has_value());
    // the zero coupon is gone; next obligation is the redemption observation
    const ObservationAtom* next = next_observation(r2->residual);
    REQUIRE(next != nullptr);
    CHECK(next->key == "redeem");
}

TEST_CASE("bond template parameter validation") {
    CHECK(!make_green_bond({"i", "V", "C", "EUR", 0, 1, 1, {10, 20}}).ok());
    CHECK(!make_green_bond({"i", "V", "C", "EUR", 100, 0, 1, {10}}).ok());
    CHECK(!make_green_bond({"i", "V", "C", "EUR", 100, 1, 1, {10}}).ok());      // missing redemption deadline
    CHECK(!make_green_bond({"i", "V", "C", "EUR", 100, 1, 1, {10, 11}}).ok());  // gap too small
    CHECK(!make_green_bond({"i", "V", "C", "EUR", 100, 2, 1, {20, 10, 30}}).ok());
    CHECK(make_green_bond({"i", "V", "C", "EUR", 100, 2, 1, {10, 13, 16}}).ok());
}

// ---------------------------------------------------------------------------
// Contract manager
// ---------------------------------------------------------------------------

namespace {

struct ContractFixture {
    World w;
    std::unique_ptr<ResourceManager> sec;
    std::unique_ptr<ContractManager> cm;
    std::string isin = "GB0000000001";

    ContractFixture() {
        w.add_party("issuer", {Role::Issuer});
        w.add_party("V", {Role::VerificationAgent});
        w.add_party("C", {Role::CalculationAgent});
        w.add_party("inv1", {Role::Investor});
        w.add_party("inv2", {Role::Investor});
        sec = w.make_resource_manager("sec");
        ContractManager::Config cfg{"cm", "op", crypto::keypair_from_string_seed("world-op")};
        cm = ContractManager::create(cfg, *w.identity,
                                     [this](const std::string& id) { return sec->holders_of(id); },
                                     std::make_unique<MemStorage>());
    }

    Expected<std::string> issue(const SpecPtr& spec) {
        Bytes docs = to_bytes("prospectus text");
        Bytes digest = crypto::digest_bytes(crypto::sha256(view_of(docs)));
        Bytes intent = ContractManager::issue_intent(isin, spec_to_sexpr(spec), view_of(digest));
        return cm->issue_instrument(isin, spec, docs, "issuer", w.party("issuer").sign(view_of(intent)));
    }

    LifecycleEvent signed_obs(const PartyId& agent, const std::string& key, std::int64_t value) {
        LifecycleEvent ev = obs_event(isin, agent, key, value);
        ev.signature = w.party(agent).sign(view_of(ev.intent_bytes()));
        return ev;
    }
};

} // namespace

TEST_CASE("issuing Done is immediately terminal; duplicate isins are rejected") {
    ContractFixture fx;
    auto res = fx.issue(spec_done());
    REQUIRE(res.ok());
    CHECK(fx.cm->instance(fx.isin)->status == InstrumentStatus::Fulfilled);
    CHECK(fx.cm->query_state(fx.isin).value().state_version == 0);

    auto dup = fx.issue(spec_done());
    CHECK(!dup.ok());
}

TEST_CASE("green bond issuance starts live at version zero with residual == spec") {
    ContractFixture fx;
    auto bond = make_green_bond({"issuer", "V", "C", "EUR", 1000000, 2, 1, {10, 20, 30}});
    REQUIRE(bond.ok());
    REQUIRE(fx.issue(bond.value()).ok());
    auto view = fx.cm->query_state(fx.isin);
    REQUIRE(view.ok());
    CHECK(view.value().state_version == 0);
    CHECK(view.value().status == InstrumentStatus::Live);
    CHECK(view.value().residual == spec_to_sexpr(bond.value()));
    CHECK(fx.cm->is_tradeable(fx.isin));
}

TEST_CASE("accepted events bump the version; rejected events never do") {
    ContractFixture fx;
    auto bond = make_green_bond({"issuer", "V", "C", "EUR", 1000000, 1, 1, {10, 20}});
    REQUIRE(fx.issue(bond.value()).ok());

    // wrong author for the observation
    auto bad = fx.cm->apply_lifecycle(fx.signed_obs("C", "co2_tons_0", 5));
    REQUIRE(!bad.ok());
    CHECK(fx.cm->version_of(fx.isin) == 0);

    auto good = fx.cm->apply_lifecycle(fx.signed_obs("V", "co2_tons_0", 5));
    REQUIRE(good.ok());
    CHECK(good.value() == 1);
    CHECK(fx.cm->version_of(fx.isin) == 1);

    // below-threshold observation is inadmissible
    auto low = fx.cm->apply_lifecycle(fx.signed_obs("V", "co2_tons_0", 0));
    REQUIRE(!low.ok());
    CHECK(low.error().code == Errc::NoMatch);
    CHECK(fx.cm->version_of(fx.isin) == 1);
}

TEST_CASE("direct payment registration is refused outside a transaction") {
    ContractFixture fx;
    REQUIRE(fx.sec->register_resource(fx.isin, 0, "issuer").ok());
    REQUIRE(do_issue(*fx.sec, fx.w, fx.isin, "inv1", 1000, "issuer").ok());
    auto bond = make_green_bond({"issuer", "V", "C", "EUR", 1000, 1, 1, {10, 20}});
    REQUIRE(fx.issue(bond.value()).ok());
    REQUIRE(fx.cm->apply_lifecycle(fx.signed_obs("V", "co2_tons_0", 5)).ok());
    REQUIRE(fx.cm->apply_lifecycle(fx.signed_obs("C", "yield_0", 250)).ok());

    auto pay = fx.cm->pending_payment(fx.isin);
    REQUIRE(pay.has_value());
    LifecycleEvent ev = pay_event(fx.isin, pay->transfers, "issuer");
    ev.signature = fx.w.party("issuer").sign(view_of(ev.intent_bytes()));
    auto res = fx.cm->apply_lifecycle(ev);
    REQUIRE(!res.ok());
    CHECK(res.error().code == Errc::Unauthorized);
}

TEST_CASE("holder snapshot rides the yield observation and pins the split") {
    ContractFixture fx;
    REQUIRE(fx.sec->register_resource(fx.isin, 0, "issuer").ok());
    REQUIRE(fx.sec->open_account("inv1", fx.isin, 0).ok());
    REQUIRE(fx.sec->open_account("inv2", fx.isin, 0).ok());
    REQUIRE(do_issue(*fx.sec, fx.w, fx.isin, "inv1", 600000, "issuer").ok());
    REQUIRE(do_issue(*fx.sec, fx.w, fx.isin, "inv2", 400000, "issuer").ok());

    auto bond = make_green_bond({"issuer", "V", "C", "EUR", 1000000, 1, 1, {10, 20}});
    REQUIRE(fx.issue(bond.value()).ok());
    REQUIRE(fx.cm->apply_lifecycle(fx.signed_obs("V", "co2_tons_0", 5)).ok());
    REQUIRE(fx.cm->apply_lifecycle(fx.signed_obs("C", "yield_0", 250)).ok());

    auto pay = fx.cm->pending_payment(fx.isin);
    REQUIRE(pay.has_value());
    REQUIRE(pay->transfers.size() == 2);
    CHECK(pay->transfers[0] == TransferRef{"issuer", "inv1", "EUR", 15000});
    CHECK(pay->transfers[1] == TransferRef{"issuer", "inv2", "EUR", 10000});

    // holdings move after the snapshot; the pinned split must not change
    TransferInstruction shift{"inv1", "inv2", fx.isin, 600000, ""};
    REQUIRE(fx.sec->transfer(shift, "inv1",
                             fx.w.party("inv1").sign(view_of(ResourceManager::transfer_intent(shift)))).ok());
    auto pay2 = fx.cm->pending_payment(fx.isin);
    REQUIRE(pay2.has_value());
    CHECK(pay2->transfers == pay->transfers);
}

TEST_CASE("deadline expiry defaults the instrument and suspends trading") {
    ContractFixture fx;
    auto bond = make_green_bond({"issuer", "V", "C", "EUR", 1000, 1, 1, {10, 20}});
    REQUIRE(fx.issue(bond.value()).ok());

    LifecycleEvent tick = time_event(fx.isin, 11, "op");
    tick.signature = fx.w.party("op").sign(view_of(tick.intent_bytes()));
    auto res = fx.cm->apply_lifecycle(tick);
    REQUIRE(res.ok());
    CHECK(fx.cm->instance(fx.isin)->status == InstrumentStatus::Defaulted);
    CHECK(!fx.cm->is_tradeable(fx.isin));
}

TEST_CASE("per-isin event streams commute across instruments") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 10; trial++) {
        auto run = [&](bool swap_order) {
            ContractFixture fx;
            SpecPtr spec_a = spec_seq(spec_observation(ObservationAtom{"V", "a1", Predicate{}, 5}),
                                      spec_observation(ObservationAtom{"C", "a2", Predicate{}, 10}));
            SpecPtr spec_b = spec_seq(spec_observation(ObservationAtom{"C", "b1", Predicate{}, 5}),
                                      spec_observation(ObservationAtom{"V", "b2", Predicate{}, 10}));
            fx.isin = "GB0000000001";
            REQUIRE(fx.issue(spec_a).ok());
            fx.isin = "GB0000000002";
            REQUIRE(fx.issue(spec_b).ok());

            std::vector<std::pair<std::string, LifecycleEvent>> events;
            fx.isin = "GB0000000001";
            events.emplace_back("GB0000000001", fx.signed_obs("V", "a1", 1));
            events.emplace_back("GB0000000001", fx.signed_obs("C", "a2", 2));
            fx.isin = "GB0000000002";
            events.emplace_back("GB0000000002", fx.signed_obs("C", "b1", 3));
            events.emplace_back("GB0000000002", fx.signed_obs("V", "b2", 4));
            // interleave while preserving per-isin order
            std::vector<std::pair<std::string, LifecycleEvent>> schedule;
            std::size_t ia = 0, ib = 2;
            while (ia < 2 || ib < 4) {
                bool take_a = ib >= 4 || (ia < 2 && (swap_order ? rng() % 2 == 0 : rng() % 2 == 1));
                if (take_a) {
                    schedule.push_back(events[ia++]);
                } else {
                    schedule.push_back(events[ib++]);
                }
            }
            for (auto& [isin, ev] : schedule) REQUIRE(fx.cm->apply_lifecycle(ev).ok());
            return std::make_pair(fx.cm->query_state("GB0000000001").value().residual,
                                  fx.cm->query_state("GB0000000002").value().residual);
        };
        auto r1 = run(false);
        auto r2 = run(true);
        CHECK(r1.first == r2.first);
        CHECK(r1.second == r2.second);
    }
}

TEST_CASE("query state equals replay of the contract ledger") {
    ContractFixture fx;
    auto bond = make_green_bond({"issuer", "V", "C", "EUR", 1000000, 1, 1, {10, 20}});
    REQUIRE(fx.issue(bond.value()).ok());
    REQUIRE(fx.cm->apply_lifecycle(fx.signed_obs("V", "co2_tons_0", 5)).ok());
    REQUIRE(fx.cm->apply_lifecycle(fx.signed_obs("C", "yield_0", 250)).ok());

    ContractManager::Config cfg{"cm", "op", crypto::keypair_from_string_seed("world-op")};
    auto copy = std::make_unique<MemStorage>();
    for (const auto& e : decode_records(view_of(fx.cm->ledger().storage().read_durable()))) {
        copy->append_record(view_of(e.encode()));
    }
    copy->flush();
    auto replayed = ContractManager::restore(cfg, *fx.w.identity,
                                             [&fx](const std::string& id) { return fx.sec->holders_of(id); },
                                             std::move(copy));
    CHECK(replayed->encode_state() == fx.cm->encode_state());
    CHECK(replayed->version_of(fx.isin) == 2);
}

TEST_CASE("atomic coupon: currency legs and contract registration commit together") {
    ContractFixture fx;
    auto cur = fx.w.make_resource_manager("cur");
    fx.w.add_party("mint", {Role::Issuer});
    REQUIRE(cur->register_resource("EUR", 2, "mint").ok());
    REQUIRE(cur->open_account("issuer", "EUR", 0).ok());
    REQUIRE(do_issue(*cur, fx.w, "EUR", "issuer", 100000, "mint").ok());
    REQUIRE(fx.sec->register_resource(fx.isin, 0, "issuer").ok());
    REQUIRE(fx.sec->open_account("inv1", fx.isin, 0).ok());
    REQUIRE(fx.sec->open_account("inv2", fx.isin, 0).ok());
    REQUIRE(do_issue(*fx.sec, fx.w, fx.isin, "inv1", 600000, "issuer").ok());
    REQUIRE(do_issue(*fx.sec, fx.w, fx.isin, "inv2", 400000, "issuer").ok());

    auto bond = make_green_bond({"issuer", "V", "C", "EUR", 1000000, 1, 1, {10, 20}});
    REQUIRE(fx.issue(bond.value()).ok());
    REQUIRE(fx.cm->apply_lifecycle(fx.signed_obs("V", "co2_tons_0", 5)).ok());
    REQUIRE(fx.cm->apply_lifecycle(fx.signed_obs("C", "yield_0", 250)).ok());

    auto pay = fx.cm->pending_payment(fx.isin);
    REQUIRE(pay.has_value());
    LifecycleEvent ev = pay_event(fx.isin, pay->transfers, "issuer");
    ev.txn_ref = "coupon-0";
    ev.signature = fx.w.party("issuer").sign(view_of(ev.intent_bytes()));

    std::vector<TxnAction> actions;
    for (const TransferRef& t : pay->transfers) {
        actions.push_back({"cur", make_transfer_action(fx.w, t.from, t.to, t.resource, t.amount, "coupon-0")});
    }
    actions.push_back({"cm", ApplyLifecycleAction{fx.isin, ev.encode()}});

    DirectCoordinator coord([&](const std::string& mid) -> TxnParticipant* {
        if (mid == "cur") return cur.get();
        if (mid == "cm") return fx.cm.get();
        return nullptr;
    });
    TxnOutcome out = coord.execute_atomic(actions, "issuer");
    REQUIRE(out.decision == TxnDecision::Committed);
    CHECK(cur->account("inv1", "EUR")->available == 15000);
    CHECK(cur->account("inv2", "EUR")->available == 10000);
    CHECK(cur->account("issuer", "EUR")->available == 75000);
    CHECK(fx.cm->version_of(fx.isin) == 3);

    // tampered refs: one leg understated; the contract manager votes no
    auto bond2 = make_green_bond({"issuer", "V", "C", "EUR", 1000000, 1, 1, {40, 50}});
    fx.isin = "GB0000000002";
    REQUIRE(fx.sec->register_resource(fx.isin, 0, "issuer").ok());
    REQUIRE(do_issue(*fx.sec, fx.w, fx.isin, "inv1", 600000, "issuer").ok());
    REQUIRE(do_issue(*fx.sec, fx.w, fx.isin, "inv2", 400000, "issuer").ok());
    REQUIRE(fx.issue(bond2.value()).ok());
    REQUIRE(fx.cm->apply_lifecycle(fx.signed_obs("V", "co2_tons_0", 5)).ok());
    REQUIRE(fx.cm->apply_lifecycle(fx.signed_obs("C", "yield_0", 250)).ok());
    auto pay2 = fx.cm->pending_payment(fx.isin);
    REQUIRE(pay2.has_value());
    LifecycleEvent ev2 = pay_event(fx.isin, pay2->transfers, "issuer");
    ev2.signature = fx.w.party("issuer").sign(view_of(ev2.intent_bytes()));
    std::vector<TxnAction> tampered;
    tampered.push_back(
        {"cur", make_transfer_action(fx.w, "issuer", "inv1", "EUR", 14999, "")}); // mismatch
    tampered.push_back({"cur", make_transfer_action(fx.w, "issuer", "inv2", "EUR", 10000, "")});
    tampered.push_back({"cm", ApplyLifecycleAction{fx.isin, ev2.encode()}});
    TxnOutcome bad = coord.execute_atomic(tampered, "issuer");
    CHECK(bad.decision == TxnDecision::Aborted);
    CHECK(fx.cm->version_of(fx.isin) == 2);
    CHECK(cur->account("inv1", "EUR")->available == 15000); // unchanged
}
