#include <gtest/gtest.h>

#include <string>

#include "deisam/scene.hpp"

using namespace deisam;

namespace {

SceneGraph person_umbrella() {
    SceneGraph sg;
    sg.image_id = 1;
    sg.objects = {{11, {"person"}, {"person.n.01"}, {0, 0, 10, 20}}, {22, {"umbrella"}, {"umbrella.n.01"}, {5, 5, 8, 8}}};
    sg.relations = {{11, 22, "holding", std::nullopt}};
    return sg;
}

}  // namespace

TEST(SceneFacts, HoldingUmbrella) {
    const SceneFacts f = scene_graph_to_facts(person_umbrella());
    ASSERT_EQ(f.facts.size(), 3u);
    EXPECT_EQ(f.facts[0], Atom::fact("holding", {"obj1", "obj2"}));
    EXPECT_EQ(f.facts[1], Atom::fact("type", {"obj1", "person"}));
    EXPECT_EQ(f.facts[2], Atom::fact("type", {"obj2", "umbrella"}));
    for (double v : f.values) EXPECT_EQ(v, 1.0);
    ASSERT_EQ(f.objects.size(), 2u);
    EXPECT_EQ(f.objects[1].constant, "obj2");
    EXPECT_EQ(f.objects[1].object_id, 22);
    EXPECT_EQ(f.object("obj1")->box, (Box{0, 0, 10, 20}));
}

TEST(SceneFacts, SingleObjectNoRelations) {
    SceneGraph sg;
    sg.objects = {{5, {"tree"}, {}, {1, 1, 1, 1}}};
    const SceneFacts f = scene_graph_to_facts(sg);
    ASSERT_EQ(f.facts.size(), 1u);
    EXPECT_EQ(f.facts[0].predicate, "type");
}

TEST(SceneFacts, MultiWordNamesAndPredicates) {
    SceneGraph sg;
    sg.objects = {{1, {"car"}, {}, {0, 0, 5, 5}}, {2, {"white line"}, {}, {0, 0, 5, 5}}};
    sg.relations = {{1, 2, "parked on", std::nullopt}};
    const SceneFacts f = scene_graph_to_facts(sg);
    EXPECT_TRUE(f.facts.contains(Atom::fact("parked_on", {"obj1", "obj2"})));
    EXPECT_TRUE(f.facts.contains(Atom::fact("type", {"obj2", "whiteline"})));
}

TEST(SceneFacts, ConfidencesCarried) {
    SceneGraph sg = person_umbrella();
    sg.relations[0].score = 0.25;
    const SceneFacts f = scene_graph_to_facts(sg);
    EXPECT_DOUBLE_EQ(f.values[0], 0.25);
}

TEST(SceneFacts, DanglingReference) {
    SceneGraph sg = person_umbrella();
    sg.relations.push_back({11, 99, "on", std::nullopt});
    EXPECT_THROW(scene_graph_to_facts(sg), dangling_reference);
}

TEST(SceneFacts, CountProperty) {
    // |relations| + one type fact per single-named object, all ground
    for (int n = 1; n <= 6; ++n) {
        SceneGraph sg;
        for (int i = 0; i < n; ++i) sg.objects.push_back({100 + i, {"thing" + std::to_string(i)}, {}, {0, 0, 1, 1}});
        for (int i = 0; i + 1 < n; ++i) sg.relations.push_back({100 + i, 101 + i, "near", std::nullopt});
        const SceneFacts f = scene_graph_to_facts(sg);
        EXPECT_EQ(f.facts.size(), sg.relations.size() + sg.objects.size());
        for (const auto& a : f.facts.facts()) EXPECT_TRUE(a.ground());
    }
}

TEST(SceneFacts, MultiNamedObjectsGetOneTypeFactPerName) {
    SceneGraph sg;
    sg.objects = {{1, {"man", "person"}, {}, {0, 0, 1, 1}}};
    const SceneFacts f = scene_graph_to_facts(sg);
    EXPECT_EQ(f.facts.size(), 2u);
    EXPECT_TRUE(f.facts.contains(Atom::fact("type", {"obj1", "person"})));
}

TEST(SceneJson, LoadsVisualGenomeStyle) {
    const json j = json::parse(R"({
      "image_id": 7, "width": 800,
      "objects": [
        {"object_id": 1, "names": ["person"], "synsets": ["person.n.01"], "x": 1, "y": 2, "w": 3, "h": 4, "attributes": []},
        {"object_id": 2, "name": "boat", "x": 0, "y": 0, "w": 10, "h": 10}
      ],
      "relationships": [
        {"relationship_id": 9, "predicate": "ON", "subject": {"object_id": 1}, "object": {"object_id": 2}}
      ]})");
    const SceneGraph sg = scene_graph_from_json(j);
    EXPECT_EQ(sg.image_id, 7);
    ASSERT_EQ(sg.objects.size(), 2u);
    EXPECT_EQ(sg.objects[1].names, std::vector<std::string>{"boat"});
    ASSERT_EQ(sg.relations.size(), 1u);
    EXPECT_EQ(sg.relations[0].subject_id, 1);
    const SceneFacts f = scene_graph_to_facts(sg);
    EXPECT_TRUE(f.facts.contains(Atom::fact("on", {"obj1", "obj2"})));
}

TEST(SceneJson, RoundTrip) {
    SceneGraph sg = person_umbrella();
    sg.relations[0].score = 0.5;
    EXPECT_EQ(scene_graph_from_json(to_json(sg)), sg);
}

TEST(SceneJson, SchemaErrors) {
    EXPECT_THROW(scene_graph_from_json(json::parse(R"({"image_id": 1})")), schema_error);
    EXPECT_THROW(scene_graph_from_json(json::parse(
                     R"({"image_id": 1, "objects": [{"object_id": 1, "names": ["a"], "x": 0, "y": 0, "w": 0, "h": 1}]})")),
                 schema_error);
    EXPECT_THROW(scene_graph_from_json(json::parse(
                     R"({"image_id": 1, "objects": [{"object_id": 1, "names": ["a"], "x": 0, "y": 0, "w": 1, "h": 1},
                                                    {"object_id": 1, "names": ["b"], "x": 0, "y": 0, "w": 1, "h": 1}]})")),
                 schema_error);
    try {
        scene_graph_from_json(json::parse(R"({"image_id": 1, "objects": [{"object_id": 1, "x": 0, "y": 0, "w": 1}]})"));
        FAIL();
    } catch (const schema_error& e) {
        EXPECT_NE(std::string(e.what()).find("/objects/0"), std::string::npos) << e.what();
    }
}

TEST(FactSetTest, Dedup) {
    FactSet fs;
    EXPECT_EQ(fs.add(Atom::fact("p", {"a"})), 0u);
    EXPECT_EQ(fs.add(Atom::fact("q", {"a"})), 1u);
    EXPECT_EQ(fs.add(Atom::fact("p", {"a"})), 0u);
    EXPECT_EQ(fs.size(), 2u);
    EXPECT_EQ(*fs.find(Atom::fact("q", {"a"})), 1u);
}
