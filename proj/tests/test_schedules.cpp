// SPDX-License-Identifier: Apache-2.0
//
// Schedule anchor values and shape properties.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "steve/schedules.hpp"

#include <cmath>

using steve::lr_schedule;
using steve::temperature_schedule;

namespace {
constexpr double kPeak = 3e-4;
constexpr int kWarmup = 30000;
constexpr double kHalflife = 250000.0;
}  // namespace

TEST_CASE("learning rate anchors") {
  CHECK(lr_schedule(0, kPeak, kWarmup, kHalflife) == 0.0);
  CHECK(std::fabs(lr_schedule(kWarmup, kPeak, kWarmup, kHalflife) - kPeak) <=
        1e-12 * kPeak);
  // One half-life past warmup sits exactly at peak/2.
  CHECK(std::fabs(lr_schedule(280000, kPeak, kWarmup, kHalflife) - kPeak / 2) <=
        1e-12 * kPeak);
}

TEST_CASE("learning rate shape") {
  // Rising during warmup, then strictly decaying.
  double prev = -1.0;
  for (int step = 0; step <= kWarmup; step += 1000) {
    const double lr = lr_schedule(step, kPeak, kWarmup, kHalflife);
    CHECK(lr > prev);
    prev = lr;
  }
  for (int step = kWarmup; step <= 500000; step += 10000) {
    const double lr = lr_schedule(step, kPeak, kWarmup, kHalflife);
    CHECK(lr <= prev);
    CHECK(lr > 0.0);
    prev = lr;
  }
  CHECK_THROWS(lr_schedule(0, kPeak, 0, kHalflife));
  CHECK_THROWS(lr_schedule(0, kPeak, kWarmup, 0.0));
}

TEST_CASE("temperature anchors") {
  CHECK(temperature_schedule(0, 1.0, 0.1, 30000) == 1.0);
  CHECK(temperature_schedule(15000, 1.0, 0.1, 30000) == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(temperature_schedule(30000, 1.0, 0.1, 30000) == 0.1);
  CHECK(temperature_schedule(1000000, 1.0, 0.1, 30000) == 0.1);
}

TEST_CASE("temperature is monotone non-increasing") {
  double prev = 2.0;
  for (int step = 0; step <= 60000; step += 500) {
    const double tau = temperature_schedule(step, 1.0, 0.1, 30000);
    CHECK(tau <= prev);
    CHECK(tau >= 0.1);
    prev = tau;
  }
}

TEST_CASE("schedules scaled to desk length keep their endpoints") {
  // A 5000-step run scales warmup and halflife by 5000/200000.
  const double f = 5000.0 / 200000.0;
  const int warmup = static_cast<int>(kWarmup * f);
  const double halflife = kHalflife * f;
  CHECK(lr_schedule(0, kPeak, warmup, halflife) == 0.0);
  CHECK(std::fabs(lr_schedule(warmup, kPeak, warmup, halflife) - kPeak) <=
        1e-12 * kPeak);
  const int decay = static_cast<int>(30000 * f);
  CHECK(temperature_schedule(0, 1.0, 0.1, decay) == 1.0);
  CHECK(temperature_schedule(decay, 1.0, 0.1, decay) == 0.1);
}
