#include <deque>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "skillflow/error.hpp"
#include "skillflow/state_machine.hpp"

using namespace skillflow;
using S = SkillState;
using C = TransitionCommand;

namespace {

// Legal command transitions written out as data; every pair not listed is
// illegal.
const std::map<std::pair<S, C>, S> kTable = {
    {{S::Idle, C::Start}, S::Starting},

    {{S::Idle, C::Stop}, S::Stopping},       {{S::Starting, C::Stop}, S::Stopping},
    {{S::Execute, C::Stop}, S::Stopping},    {{S::Completing, C::Stop}, S::Stopping},
    {{S::Complete, C::Stop}, S::Stopping},   {{S::Resetting, C::Stop}, S::Stopping},

    {{S::Idle, C::Abort}, S::Aborting},      {{S::Starting, C::Abort}, S::Aborting},
    {{S::Execute, C::Abort}, S::Aborting},   {{S::Completing, C::Abort}, S::Aborting},
    {{S::Complete, C::Abort}, S::Aborting},  {{S::Resetting, C::Abort}, S::Aborting},
    {{S::Stopping, C::Abort}, S::Aborting},  {{S::Stopped, C::Abort}, S::Aborting},
    {{S::Clearing, C::Abort}, S::Aborting},

    {{S::Aborted, C::Clear}, S::Clearing},

    {{S::Complete, C::Reset}, S::Resetting}, {{S::Stopped, C::Reset}, S::Resetting},
};

const std::map<S, S> kAutoAdvance = {
    {S::Starting, S::Execute},  {S::Execute, S::Completing}, {S::Completing, S::Complete},
    {S::Resetting, S::Idle},    {S::Stopping, S::Stopped},   {S::Clearing, S::Stopped},
    {S::Aborting, S::Aborted},
};

const std::set<S> kActing = {S::Starting, S::Execute, S::Completing, S::Resetting,
                             S::Stopping, S::Clearing, S::Aborting};

} // namespace

TEST_CASE("all 55 state/command pairs match the table") {
    int checked = 0;
    for (S s : kAllStates) {
        for (C c : kAllCommands) {
            CAPTURE(to_string(s));
            CAPTURE(to_string(c));
            auto it = kTable.find({s, c});
            auto got = try_apply(s, c);
            if (it == kTable.end()) {
                CHECK_FALSE(got.has_value());
                try {
                    apply_command(s, c);
                    FAIL("expected IllegalTransition");
                } catch (const Error& e) {
                    CHECK(e.code() == ErrorCode::IllegalTransition);
                }
            } else {
                REQUIRE(got.has_value());
                CHECK(*got == it->second);
                CHECK(apply_command(s, c) == it->second);
            }
            ++checked;
        }
    }
    CHECK(checked == 55);
}

TEST_CASE("auto-advance rows and NotActing") {
    for (S s : kAllStates) {
        CAPTURE(to_string(s));
        auto it = kAutoAdvance.find(s);
        if (it == kAutoAdvance.end()) {
            CHECK_FALSE(try_complete_acting(s).has_value());
            CHECK_THROWS_AS(complete_acting(s), Error);
        } else {
            CHECK(complete_acting(s) == it->second);
        }
    }
    CHECK(kAutoAdvance.size() == 7);
    try {
        complete_acting(S::Idle);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NotActing);
    }
}

TEST_CASE("acting and waiting partition the states") {
    int acting = 0, waiting = 0;
    for (S s : kAllStates) {
        bool a = kActing.contains(s);
        CHECK(is_acting(s) == a);
        CHECK((classify(s).activity == Activity::Acting) == a);
        (a ? acting : waiting)++;
    }
    CHECK(acting == 7);
    CHECK(waiting == 4);
}

TEST_CASE("classification examples") {
    CHECK(classify(S::Complete) == StateClass{Activity::Waiting, Outcome::FinalSuccess});
    CHECK(classify(S::Stopped) == StateClass{Activity::Waiting, Outcome::Failure});
    CHECK(classify(S::Aborted) == StateClass{Activity::Waiting, Outcome::Failure});
    CHECK(classify(S::Execute) == StateClass{Activity::Acting, Outcome::Nominal});
    CHECK(classify(S::Idle) == StateClass{Activity::Waiting, Outcome::Nominal});
}

TEST_CASE("abort is enabled everywhere except Aborting and Aborted") {
    for (S s : kAllStates) {
        bool expected = s != S::Aborting && s != S::Aborted;
        CHECK(try_apply(s, C::Abort).has_value() == expected);
    }
}

TEST_CASE("recovery reaches Idle from every state") {
    // Breadth-first search over states reachable by the recovery commands
    // (Abort, Clear, Reset) applied when legal, plus auto-advance of acting
    // states. Idle must be reachable from every start.
    for (S start : kAllStates) {
        std::set<S> seen{start};
        std::deque<S> queue{start};
        bool reached = false;
        while (!queue.empty()) {
            S s = queue.front();
            queue.pop_front();
            if (s == S::Idle) {
                reached = true;
                break;
            }
            std::vector<S> next;
            for (C c : {C::Abort, C::Clear, C::Reset})
                if (auto n = try_apply(s, c)) next.push_back(*n);
            if (auto n = try_complete_acting(s)) next.push_back(*n);
            for (S n : next)
                if (seen.insert(n).second) queue.push_back(n);
        }
        CAPTURE(to_string(start));
        CHECK(reached);
    }
}

TEST_CASE("recovery sequence Abort, Clear, Reset drives to Idle") {
    for (S start : kAllStates) {
        S s = start;
        auto settle = [&] {
            while (auto n = try_complete_acting(s)) s = *n;
        };
        settle();
        for (C c : {C::Abort, C::Clear, C::Reset}) {
            if (auto n = try_apply(s, c)) s = *n;
            settle();
        }
        CAPTURE(to_string(start));
        // From a settled Complete or Idle, Abort still applies, so the
        // sequence always passes through Aborted and ends in Idle.
        CHECK(s == S::Idle);
    }
}

TEST_CASE("no command leads from a failure state straight to Execute") {
    for (S s : kAllStates) {
        if (classify(s).outcome != Outcome::Failure) continue;
        for (C c : kAllCommands) {
            auto n = try_apply(s, c);
            CHECK((!n || *n != S::Execute));
            if (n && c == C::Start) FAIL("Start legal from a failure state");
        }
    }
}

TEST_CASE("wire spellings") {
    for (S s : kAllStates) CHECK(parse_skill_state(to_string(s)) == s);
    CHECK_FALSE(parse_skill_state("idle"));
    for (C c : kAllCommands) CHECK(parse_command(to_string(c)) == c);
    CHECK(parse_command("start") == C::Start);
    CHECK(parse_command("clear") == C::Clear);
    CHECK_FALSE(parse_command("START"));
    CHECK_FALSE(parse_command("hold"));
}
