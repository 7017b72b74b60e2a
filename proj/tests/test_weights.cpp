#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "iyolo/errors.hpp"
#include "iyolo/network.hpp"
#include "iyolo/weights_io.hpp"

using namespace iyolo;
using testutil::random_tensor;
using testutil::temp_path;

namespace {

std::string serialized(const Network& net) {
    std::ostringstream out(std::ios::binary);
    save_weights(net, out);
    return out.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool params_equal(const Network& a, const Network& b) {
    if (a.params.size() != b.params.size()) return false;
    auto eq = [](const std::vector<float>& x, const std::vector<float>& y) {
        return x.size() == y.size() &&
               (x.empty() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
    };
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        const ConvParams& p = a.params[i];
        const ConvParams& q = b.params[i];
        if (!eq(p.weights, q.weights) || !eq(p.bias, q.bias) || !eq(p.gamma, q.gamma) ||
            !eq(p.beta, q.beta) || !eq(p.running_mean, q.running_mean) ||
            !eq(p.running_var, q.running_var)) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("weight files round-trip bit-exactly") {
    const Network saved_net = build<float>(tiny_spec(3), 21);
    const std::string path = temp_path("roundtrip.iyw");
    save_weights(saved_net, path);

    Network loaded = build<float>(tiny_spec(3), 99);
    REQUIRE(!params_equal(saved_net, loaded));
    load_weights(loaded, path);
    CHECK(params_equal(saved_net, loaded));

    // Same forward outputs, and a second save produces identical bytes.
    Rng rng(4);
    const Tensor img = random_tensor<float>(3, 64, 64, rng, 0.0, 1.0);
    const Tensor a = forward(saved_net, img);
    const Tensor b = forward(loaded, img);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
    CHECK(serialized(saved_net) == serialized(loaded));

    const WeightsHeader h = peek_weights(path);
    CHECK(h.version == 1);
    CHECK(h.num_classes == 3);
    CHECK(h.layer_count == 12);
    REQUIRE(h.anchors.size() == 5);
    CHECK(h.anchors[0].w == saved_net.spec.anchors[0].w);
}

TEST_CASE("weight file layout starts with magic and version") {
    const Network net = build<float>(tiny_spec(3), 1);
    const std::string bytes = serialized(net);
    REQUIRE(bytes.size() > 20);
    CHECK(bytes.substr(0, 4) == "IYW1");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // version, little-endian u32
    CHECK(static_cast<unsigned char>(bytes[5]) == 0);
    CHECK(static_cast<unsigned char>(bytes[8]) == 3);  // num_classes
    CHECK(static_cast<unsigned char>(bytes[12]) == 5);  // anchor count

    // Header + per-layer payload accounts for every byte.
    std::size_t expect = 4 + 4 + 4 + 4 + net.spec.anchors.size() * 8 + 4;
    for (const ConvParams& p : net.params) {
        expect += 4 + 1;
        expect += (p.has_bn ? 4u * p.gamma.size() * 4u : p.bias.size() * 4u);
        expect += p.weights.size() * 4;
    }
    CHECK(bytes.size() == expect);
}

TEST_CASE("weight loader rejects malformed files with typed errors") {
    const Network net = build<float>(tiny_spec(3), 5);
    const std::string good = serialized(net);

    SUBCASE("bad magic at offset zero") {
        std::string bad = good;
        bad[0] = 'X';
        write_file(temp_path("badmagic.iyw"), bad);
        Network target = build<float>(tiny_spec(3), 0);
        try {
            load_weights(target, temp_path("badmagic.iyw"));
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind == ParseError::Kind::BadMagic);
            CHECK(e.offset == 0);
        }
    }

    SUBCASE("unsupported version") {
        std::string bad = good;
        bad[4] = 2;
        write_file(temp_path("badversion.iyw"), bad);
        Network target = build<float>(tiny_spec(3), 0);
        try {
            load_weights(target, temp_path("badversion.iyw"));
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind == ParseError::Kind::BadValue);
            CHECK(e.offset == 4);
        }
    }

    SUBCASE("truncated mid-layer reports expected and actual sizes") {
        const std::string bad = good.substr(0, good.size() - 5);
        write_file(temp_path("truncated.iyw"), bad);
        Network target = build<float>(tiny_spec(3), 0);
        try {
            load_weights(target, temp_path("truncated.iyw"));
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind == ParseError::Kind::Truncated);
            CHECK(std::string(e.what()).find("expected") != std::string::npos);
            CHECK(e.offset > 0);
        }
    }

    SUBCASE("class count mismatch against the target network") {
        write_file(temp_path("classes.iyw"), good);
        Network target = build<float>(tiny_spec(2), 0);
        try {
            load_weights(target, temp_path("classes.iyw"));
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind == ParseError::Kind::ShapeMismatch);
            CHECK(e.offset == 8);
        }
    }

    SUBCASE("trailing bytes are rejected") {
        write_file(temp_path("trailing.iyw"), good + std::string(3, '\0'));
        Network target = build<float>(tiny_spec(3), 0);
        try {
            load_weights(target, temp_path("trailing.iyw"));
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind == ParseError::Kind::BadValue);
            CHECK(e.offset == good.size());
        }
    }

    SUBCASE("missing file is an IO error") {
        Network target = build<float>(tiny_spec(3), 0);
        CHECK_THROWS_AS(load_weights(target, temp_path("nonexistent.iyw")), IoError);
    }
}
