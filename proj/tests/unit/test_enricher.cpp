// Copyright (c) 2026 The garmentfit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "gfit/enricher.hpp"
#include "gfit/garment.hpp"
#include "gfit/image.hpp"
#include "gfit/rng.hpp"
#include "gfit/text.hpp"
#include "httplib.h"
#include "json.hpp"

using namespace gfit;

namespace {

// Local rewrite service on an ephemeral port, answering with `handler`.
class MockRewriteServer {
 public:
  explicit MockRewriteServer(httplib::Server::Handler handler) {
    server_.Post("/v1/rewrite", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockRewriteServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

// A port that had a listener a moment ago and has none now.
std::string dead_url() {
  httplib::Server s;
  const int port = s.bind_to_any_port("127.0.0.1");
  s.stop();
  return "http://127.0.0.1:" + std::to_string(port);
}

}  // namespace

TEST(Enrich, RecoversRichCaptionOfGeneratedReference) {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const GarmentSpec g = random_garment(rng, static_cast<Pattern>(trial % 4));
    const auto p = enrich("a person wearing a shirt", render_reference(g));
    const std::string want = rich_caption(color_name(g.fg), pattern_name(g.pattern), color_name(g.bg), std::nullopt);
    EXPECT_EQ(p.text, want) << "trial " << trial;
    EXPECT_EQ(p.source, PromptSource::Template);
    EXPECT_FALSE(p.warning);
  }
}

TEST(Enrich, KeepsNamedBackground) {
  const GarmentSpec g{Pattern::Dots, Color::Green, Color::White, 4, 0};
  const auto p = enrich("a person wearing a shirt, orange background", render_reference(g));
  EXPECT_EQ(p.text, "a person wearing a green dots shirt with white accents, orange background");
}

TEST(Enrich, SolidRedPatch) {
  const GarmentSpec g{Pattern::Solid, Color::Red, Color::Blue, 2, 0};
  Image ref(32, 32, kReferenceGround);
  for (std::size_t y = 4; y < 28; ++y)
    for (std::size_t x = 4; x < 28; ++x) ref.set(x, y, color_rgb(Color::Red));
  const auto p = enrich("a shirt", ref);
  EXPECT_NE(p.text.find("red solid"), std::string::npos) << p.text;
  EXPECT_NE(enrich("a shirt", render_reference(g)).text.find("red solid"), std::string::npos);
}

TEST(Enrich, RichCaptionPassesThrough) {
  const std::string rich = "a person wearing a blue checker shirt with red accents, gray background";
  const auto p = enrich(rich, render_reference(GarmentSpec{}));
  EXPECT_EQ(p.text, rich);
  EXPECT_EQ(p.source, PromptSource::Passthrough);
}

TEST(Enrich, IdempotentOnOwnOutput) {
  const GarmentSpec g{Pattern::Stripes, Color::Magenta, Color::Cyan, 2, 0};
  const Image ref = render_reference(g);
  const auto once = enrich("a person wearing a shirt", ref);
  const auto twice = enrich(once.text, ref);
  EXPECT_EQ(twice.text, once.text);
  for (auto id : tokenize(once.text)) EXPECT_NE(id, kUnknownToken);
}

TEST(Enrich, NoiseFallsBackToTextured) {
  Rng rng(1);
  Image ref(32, 32, kReferenceGround);
  for (std::size_t y = 4; y < 28; ++y)
    for (std::size_t x = 4; x < 28; ++x)
      ref.set(x, y, color_rgb(static_cast<Color>(rng.uniform_int(2, 7))));
  const auto p = enrich("a person wearing a shirt", ref);
  EXPECT_TRUE(p.warning);
  EXPECT_EQ(p.source, PromptSource::Template);
  EXPECT_NE(p.text.find("textured"), std::string::npos) << p.text;
}

TEST(EnrichExternal, UsesServedPrompt) {
  std::atomic<bool> saw_image{false};
  MockRewriteServer server([&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    saw_image = body.at("prompt") == "a shirt" && !body.at("image_base64").get<std::string>().empty();
    res.set_content(R"({"rewritten_prompt": "a person wearing a teal shirt"})", "application/json");
  });
  const auto p = enrich_external("a shirt", render_reference(GarmentSpec{}), server.url());
  EXPECT_EQ(p.text, "a person wearing a teal shirt");
  EXPECT_EQ(p.source, PromptSource::External);
  EXPECT_FALSE(p.warning);
  EXPECT_TRUE(saw_image);
}

TEST(EnrichExternal, MalformedResponsesFallBack) {
  const Image ref = render_reference(GarmentSpec{Pattern::Checker, Color::Yellow, Color::Black, 2, 0});
  const auto expected = enrich("a shirt", ref);
  for (const std::string reply : {std::string("not json"), std::string(R"({"other": 1})"),
                                  std::string(R"({"rewritten_prompt": 5})")}) {
    MockRewriteServer server([&](const httplib::Request&, httplib::Response& res) {
      res.set_content(reply, "application/json");
    });
    const auto p = enrich_external("a shirt", ref, server.url());
    EXPECT_EQ(p.text, expected.text) << reply;
    EXPECT_EQ(p.source, PromptSource::Template);
    EXPECT_TRUE(p.warning);
    EXPECT_FALSE(p.diagnostic.empty());
  }
}

TEST(EnrichExternal, ServerErrorStatusFallsBack) {
  MockRewriteServer server([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const Image ref = render_reference(GarmentSpec{});
  EXPECT_EQ(enrich_external("a shirt", ref, server.url()).text, enrich("a shirt", ref).text);
}

TEST(EnrichExternal, UnreachableServerFallsBack) {
  const Image ref = render_reference(GarmentSpec{Pattern::Dots, Color::Blue, Color::Yellow, 4, 0});
  const auto p = enrich_external("a person wearing a shirt", ref, dead_url(), 2.0);
  const auto t = enrich("a person wearing a shirt", ref);
  EXPECT_EQ(p.text, t.text);
  EXPECT_EQ(p.source, t.source);
  EXPECT_TRUE(p.warning);
  EXPECT_EQ(enrich_external("x", ref, "not a url").text, enrich("x", ref).text);
}

TEST(ApplyEnrichment, ModesDispatch) {
  const Image ref = render_reference(GarmentSpec{});
  const auto off = apply_enrichment(EnrichMode::Off, "a shirt", ref);
  EXPECT_EQ(off.text, "a shirt");
  EXPECT_EQ(off.source, PromptSource::Passthrough);
  EXPECT_EQ(apply_enrichment(EnrichMode::Template, "a shirt", ref).text, enrich("a shirt", ref).text);
  EXPECT_EQ(parse_enrich_mode("external"), EnrichMode::External);
  EXPECT_FALSE(parse_enrich_mode("gpt").has_value());
}
