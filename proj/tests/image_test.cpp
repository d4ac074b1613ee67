// Checkpoint image wire format: round-trip identity, CRC and truncation
// rejection, version gating.

#include "manakin/image.hpp"

#include <doctest.h>

#include "image_gen.hpp"

using namespace manakin;

TEST_CASE("crc32 known vector") {
    Bytes check = {'1', '2', '3', '4', '5', '6', '7', '8', '9'};
    CHECK(crc32(check) == 0xCBF43926u);
    CHECK(crc32({}) == 0x00000000u);
}

TEST_CASE("serialize/deserialize identity on randomized states") {
    for (std::uint64_t seed = 1; seed <= 250; ++seed) {
        ProcessImage img = random_image(seed);
        Bytes wire = serialize_image(img);
        ProcessImage back = parse_image(wire);
        REQUIRE(back == img);
    }
}

TEST_CASE("exec-state round-trips through the app-state section") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        ExecState s = random_exec_state(seed);
        ExecState back = parse_exec_state(serialize_exec_state(s));
        REQUIRE(back == s);
    }
}

TEST_CASE("corrupted CRC is rejected") {
    ProcessImage img = random_image(7);
    Bytes wire = serialize_image(img);
    wire[wire.size() - 1] ^= 0xFF;
    CHECK_THROWS_AS(parse_image(wire), SimError);
    try {
        parse_image(wire);
    } catch (const SimError &e) {
        CHECK(e.code() == Err::CorruptImage);
    }
}

TEST_CASE("a flipped body byte is rejected by the CRC") {
    ProcessImage img = random_image(8);
    Bytes wire = serialize_image(img);
    wire[wire.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(parse_image(wire), SimError);
}

TEST_CASE("truncated sections are rejected") {
    ProcessImage img = random_image(9);
    Bytes wire = serialize_image(img);
    for (std::size_t cut : {wire.size() - 5, wire.size() / 2, std::size_t{30}}) {
        Bytes t(wire.begin(), wire.begin() + static_cast<std::ptrdiff_t>(cut));
        CHECK_THROWS_AS(parse_image(t), SimError);
    }
    // Even with a recomputed CRC, a chopped section must not parse.
    Bytes chopped(wire.begin(), wire.end() - 24);
    put_u32(chopped, crc32(chopped));
    try {
        parse_image(chopped);
        FAIL("expected corrupt-image");
    } catch (const SimError &e) {
        CHECK(e.code() == Err::CorruptImage);
    }
}

TEST_CASE("bad magic and foreign versions are refused") {
    ProcessImage img = random_image(10);
    Bytes wire = serialize_image(img);
    Bytes badMagic = wire;
    badMagic[0] = 'X';
    CHECK_THROWS_AS(parse_image(badMagic), SimError);

    Bytes badVersion = wire;
    badVersion[8] = 99; // version field, little-endian
    Bytes body(badVersion.begin(), badVersion.end() - 4);
    badVersion = body;
    put_u32(badVersion, crc32(body));
    try {
        parse_image(badVersion);
        FAIL("expected incompatible-image");
    } catch (const SimError &e) {
        CHECK(e.code() == Err::IncompatibleImage);
    }
}

TEST_CASE("image description lists sections and a CRC verdict") {
    ProcessImage img = random_image(11);
    const std::string desc = describe_image(serialize_image(img));
    CHECK(desc.find("app-state") != std::string::npos);
    CHECK(desc.find("drained-buffers") != std::string::npos);
    CHECK(desc.find("CRC OK") != std::string::npos);
}
