"""Prompt templates for candidate generation and style alignment.

Template bodies reproduce the generation prompts verbatim; placeholders are
angle-bracket markers (``<captions>``, ``<image>``, ...) swapped out at render
time. Text-only generators receive the caption/bounding-box context block;
visually-capable generators receive the image reference in place of the
``<image>`` marker.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..corpus import Category, ImageRef
from ..errors import TemplateError

#: Declared placeholder names and the literal markers they replace.
PLACEHOLDER_MARKERS = {
    "captions": "<captions>",
    "bounding_boxes": "<bounding boxes>",
    "image": "<image>",
    "question": "<question>",
    "prior_turns": "<prior turns>",
    "original_question": "<original question>",
    "original_answer": "<original answer>",
    "revised_question": "<revised question>",
    "revised_answer": "<revised answer>",
}


@dataclass(frozen=True)
class PromptTemplate:
    """A named prompt body with a declared set of placeholders."""

    name: str
    body: str
    placeholders: frozenset[str]

    def __post_init__(self) -> None:
        for name, marker in PLACEHOLDER_MARKERS.items():
            if marker in self.body and name not in self.placeholders:
                raise TemplateError(f"template {self.name!r} references undeclared placeholder {name!r}")
        for name in self.placeholders:
            if name not in PLACEHOLDER_MARKERS:
                raise TemplateError(f"template {self.name!r} declares unknown placeholder {name!r}")
            if PLACEHOLDER_MARKERS[name] not in self.body:
                raise TemplateError(f"template {self.name!r} declares unused placeholder {name!r}")

    def render(self, **bindings: str) -> str:
        """Substitute every placeholder; rendering must leave no markers."""
        missing = self.placeholders - bindings.keys()
        if missing:
            raise TemplateError(f"template {self.name!r} missing bindings: {sorted(missing)}")
        unknown = bindings.keys() - self.placeholders
        if unknown:
            raise TemplateError(f"template {self.name!r} got unexpected bindings: {sorted(unknown)}")
        out = self.body
        # An absent bounding-box block collapses together with its separator
        # so text-only prompts do not end in a dangling space.
        if bindings.get("bounding_boxes") == "":
            out = out.replace(" <bounding boxes>", "")
            bindings = {k: v for k, v in bindings.items() if k != "bounding_boxes"}
        for name, value in bindings.items():
            out = out.replace(PLACEHOLDER_MARKERS[name], value)
        residual = [n for n in self.placeholders if PLACEHOLDER_MARKERS[n] in out]
        if residual:
            raise TemplateError(f"template {self.name!r} rendered with residual markers: {residual}")
        return out


def _template(name: str, body: str) -> PromptTemplate:
    refs = frozenset(n for n, marker in PLACEHOLDER_MARKERS.items() if marker in body)
    return PromptTemplate(name=name, body=body, placeholders=refs)

QUESTION_COMPLEX_REASONING_TEXT = _template(
    'question/complex_reasoning/text_only',
    "You are an AI visual assistant that can analyze a single image. You receive five sentences, each describing the same image you are observing. In addition, specific object locations within the image are given, along with detailed coordinates. These coordinates are in the form of bounding boxes, represented as (x1, y1, x2, y2) with floating numbers ranging from 0 to 1. These values correspond to the top left x, top left y, bottom right x, and bottom right y.\n\nThe task is to use the provided caption and bounding box information, create a plausible question about the image, and provide the answer in detail.\n\nCreate complex questions beyond describing the scene.\nTo answer such questions, one should require first understanding the visual content, then based on the background knowledge or reasoning, either explain why the things are happening that way, or provide guides and help to user's request.  Make the question challenging by not including the visual content details in the question so that the user needs to reason about that first.\n\nInstead of directly mentioning the bounding box coordinates, utilize this data to explain the scene using natural language. Include details like object counts, position of the objects, relative position between the objects.\n\nWhen using the information from the caption and coordinates, directly explain the scene, and do not mention that the information source is the caption or the bounding box.  Always answer as if you are directly looking at the image.\n\n<captions> <bounding boxes>",
)

QUESTION_COMPLEX_REASONING_VISUAL = _template(
    'question/complex_reasoning/visual',
    "You are an AI visual assistant that can analyze a single image.\n\nThe task is to create a plausible question about the image, and provide the answer in detail.\n\nCreate complex questions beyond describing the scene.\nTo answer such questions, one should require first understanding the visual content, then based on the background knowledge or reasoning, either explain why the things are happening that way, or provide guides and help to user's request.  Make the question challenging by not including the visual content details in the question so that the user needs to reason about that first.\n\nInclude details like object counts, position of the objects, relative position between the objects.\n\nDo not mention anything from the prompt in your response.\n\n<image>",
)

QUESTION_CONVERSATION_TEXT = _template(
    'question/conversation/text_only',
    'You are an AI visual assistant, and you are seeing a single image. What you see are provided with five sentences, describing the same image you are looking at. Answer all questions as you are seeing the image.\n\nDesign a conversation between you and a person asking about this photo. The answers should be in a tone that a visual AI assistant is seeing the image and answering the question.\nAsk diverse questions and give corresponding answers.\n\nInclude questions asking about the visual content of the image, including the object types, counting the objects, object actions, object locations, relative positions between objects, etc. Only include questions that have definite answers:\n(1) one can see the content in the image that the question asks about and can answer confidently;\n(2) one can determine confidently from the image that it is not in the image.\nDo not ask any question that cannot be answered confidently.\n\nAlso include complex questions that are relevant to the content in the image, for example, asking about background knowledge of the objects in the image, asking to discuss about events happening in the image, etc. Again, do not ask about uncertain details.\nProvide detailed answers when answering complex questions. For example, give detailed examples or reasoning steps to make the content more convincing and well-organized.  You can include multiple paragraphs if necessary.\n\n<captions> <bounding boxes>',
)

QUESTION_CONVERSATION_VISUAL = _template(
    'question/conversation/visual',
    'You are an AI visual assistant, and you are seeing a single image. Answer all questions according to the image.\n\nDesign a conversation between you and a person asking about this photo. The answers should be in a tone that a visual AI assistant is seeing the image and answering the question.\nAsk diverse questions and give corresponding answers.\n\nInclude questions asking about the visual content of the image, including the object types, counting the objects, object actions, object locations, relative positions between objects, etc. Only include questions that have definite answers:\n(1) one can see the content in the image that the question asks about and can answer confidently;\n(2) one can determine confidently from the image that it is not in the image.\nDo not ask any question that cannot be answered confidently.\n\nAlso include complex questions that are relevant to the content in the image, for example, asking about background knowledge of the objects in the image, asking to discuss about events happening in the image, etc. Again, do not ask about uncertain details.\nProvide detailed answers when answering complex questions. For example, give detailed examples or reasoning steps to make the content more convincing and well-organized.  You can include multiple paragraphs if necessary.\n\n<image>',
)

ANSWER_COMPLEX_REASONING_TEXT = _template(
    'answer/complex_reasoning/text_only',
    "You are an AI visual assistant that can analyze a single image. You receive five sentences, each describing the same image you are observing. In addition, specific object locations within the image are given, along with detailed coordinates. These coordinates are in the form of bounding boxes, represented as (x1, y1, x2, y2) with floating numbers ranging from 0 to 1. These values correspond to the top left x, top left y, bottom right x, and bottom right y.\n\nThen, you are given a plausible question about the image. The task is to use the provided caption and bounding box information to provide the answer in detail.\n\nTo answer such questions, you should first understanding the visual content, then based on the background knowledge or reasoning, either explain why the things are happening that way, or provide guides and help to user's request.\n\nInstead of directly mentioning the bounding box coordinates, utilize this data to explain the scene using natural language. Include details like object counts, position of the objects, relative position between the objects.\n\nWhen using the information from the caption and coordinates, directly explain the scene, and do not mention that the information source is the caption or the bounding box.  Always answer as if you are directly looking at the image.\n\n<captions> <bounding boxes>\n\nQuestion: <question>\n\n===\n\nAnswer:",
)

ANSWER_COMPLEX_REASONING_VISUAL = _template(
    'answer/complex_reasoning/visual',
    "You are an AI visual assistant that can analyze a single image.\n\nThe task is to create a plausible question about the image, and provide the answer in detail.\n\nCreate complex questions beyond describing the scene.\nTo answer such questions, one should require first understanding the visual content, then based on the background knowledge or reasoning, either explain why the things are happening that way, or provide guides and help to user's request.  Make the question challenging by not including the visual content details in the question so that the user needs to reason about that first.\n\nInclude details like object counts, position of the objects, relative position between the objects.\n\nDo not mention anything from the prompt in your response.\n\n<image>\n\nQuestion: <question>\n\n===\n\nAnswer:",
)

ANSWER_DETAIL_DESCRIPTION_TEXT = _template(
    'answer/detail_description/text_only',
    'You are an AI visual assistant that can analyze a single image. You receive five sentences, each describing the same image you are observing. In addition, specific object locations within the image are given, along with detailed coordinates. These coordinates are in the form of bounding boxes, represented as (x1, y1, x2, y2) with floating numbers ranging from 0 to 1. These values correspond to the top left x, top left y, bottom right x, and bottom right y.\n\nUsing the provided caption and bounding box information, describe the scene in a detailed manner.\n\nInstead of directly mentioning the bounding box coordinates, utilize this data to explain the scene using natural language. Include details like object counts, position of the objects, relative position between the objects.\n\nWhen using the information from the caption and coordinates, directly explain the scene, and do not mention that the information source is the caption or the bounding box.  Always answer as if you are directly looking at the image.\n\n<captions> <bounding boxes>',
)

ANSWER_DETAIL_DESCRIPTION_VISUAL = _template(
    'answer/detail_description/visual',
    'You are an AI visual assistant that can analyze a single image.\n\nGiven the image, your task is to describe the scene in a detailed manner.\n\nInclude details like object counts, position of the objects, relative position between the objects.\n\nDo not mention anything from the prompt in your response.\n\n<image>',
)

CONVERSATION_SYSTEM_TEXT = _template(
    'answer/conversation_system/text_only',
    'You are an AI visual assistant, and you are seeing a single image. What you see are provided with five sentences, describing the same image you are looking at. Answer all questions as you are seeing the image.\n\nThe answers should be in a tone that a visual AI assistant is seeing the image and answering the question.\n\nProvide detailed answers when answering complex questions. For example, give detailed examples or reasoning steps to make the content more convincing and well-organized.  You can include multiple paragraphs if necessary.\n\n<captions> <bounding boxes>',
)

CONVERSATION_SYSTEM_VISUAL = _template(
    'answer/conversation_system/visual',
    'You are an AI visual assistant, and you are seeing a single image. Answer all questions according to the image.\n\nHigh-quality answers should demonstrate a deep understanding of the visual information, drawing connections between different elements in the image and providing thoughtful insights. Your responses should be clear, concise, and logically structured.\n\nFor complex questions, give detailed examples or reasoning steps to make the content more convincing and well-organized.  You can include multiple paragraphs if necessary.\n\nDo not mention anything from the prompt in your response.\n\n<image>',
)

ALIGN_REWRITE = _template(
    'align/rewrite',
    "Given the following Question and Answer, you are required to revise the Question and Answer in your writing style without changing the semantic meaning. If you think the  original question and original answer are clear and consistent with your writing style, just leave it unchanged. The response should contain just the revised question and revised answer and the explanation of revision, formatted as: 'Revised Question:', 'Revised Answer:' , and 'Explanation:'.\n\nQuestion: <original question>\n\nAnswer: <original answer>",
)

ALIGN_REVIEW = _template(
    'align/review',
    'Given the following Original Question, Revised Question,  Original Answer, and the Revised Answer, if the Revised Question or Revised Answer is inconsistent with your writing style, or deviates from the semantics of Revised Question or Original Answer, or adds or lacks any information, output "There is something wrong with the Revised Question or Revised Answer." Otherwise, output "The Revised Question and Revised Answer are fine." After making your decision, please provide a detailed explanation of your reasoning.\n\nOriginal Question: <original question>\n\nOriginal Answer: <original answer>\n\nRevised Question: <revised question>\n\nRevised Answer: <revised answer>',
)

#: Scaffold appended per conversation turn; ``prior_turns`` expands to the
#: already-generated exchanges so answers are produced autoregressively.
CONVERSATION_TURN_SCAFFOLD = _template(
    "answer/conversation_turn",
    "<prior turns>Question: <question>\n\n===\n\nAnswer:",
)


class Modality:
    TEXT_ONLY = "text_only"
    VISUAL = "visual"


_QUESTION_TEMPLATES = {
    (Category.COMPLEX_REASONING, Modality.TEXT_ONLY): QUESTION_COMPLEX_REASONING_TEXT,
    (Category.COMPLEX_REASONING, Modality.VISUAL): QUESTION_COMPLEX_REASONING_VISUAL,
    (Category.CONVERSATION, Modality.TEXT_ONLY): QUESTION_CONVERSATION_TEXT,
    (Category.CONVERSATION, Modality.VISUAL): QUESTION_CONVERSATION_VISUAL,
}

_SINGLE_TURN_ANSWER_TEMPLATES = {
    (Category.COMPLEX_REASONING, Modality.TEXT_ONLY): ANSWER_COMPLEX_REASONING_TEXT,
    (Category.COMPLEX_REASONING, Modality.VISUAL): ANSWER_COMPLEX_REASONING_VISUAL,
    (Category.DETAIL_DESCRIPTION, Modality.TEXT_ONLY): ANSWER_DETAIL_DESCRIPTION_TEXT,
    (Category.DETAIL_DESCRIPTION, Modality.VISUAL): ANSWER_DETAIL_DESCRIPTION_VISUAL,
}

_CONVERSATION_SYSTEM_TEMPLATES = {
    Modality.TEXT_ONLY: CONVERSATION_SYSTEM_TEXT,
    Modality.VISUAL: CONVERSATION_SYSTEM_VISUAL,
}


def _context_bindings(template: PromptTemplate, image: ImageRef, modality: str) -> dict[str, str]:
    if modality == Modality.TEXT_ONLY:
        context = image.context_text()
        if not context:
            raise TemplateError(f"image {image.id!r} has no caption context for text-only prompts")
        bindings = {"captions": context}
        if "bounding_boxes" in template.placeholders:
            # Bounding-box lines ride along inside the caption context block.
            bindings["bounding_boxes"] = ""
        return bindings
    return {"image": image.uri}


def render_question_prompt(category: Category, image: ImageRef, modality: str) -> str:
    """Prompt asking a generator for candidate questions about one image.

    Detail descriptions are excluded: their questions come from a fixed pool
    rather than a generator.
    """
    if category is Category.DETAIL_DESCRIPTION:
        raise TemplateError("detail-description questions are drawn from a fixed pool, not generated")
    template = _QUESTION_TEMPLATES.get((category, modality))
    if template is None:
        raise TemplateError(f"no question template for {category.value}/{modality}")
    return template.render(**_context_bindings(template, image, modality))


def render_answer_prompts(
    category: Category,
    questions: str | list[str],
    image: ImageRef,
    modality: str,
    prior_answers: list[str] | None = None,
) -> list[str]:
    """Prompts asking a generator to answer the given question(s).

    Single-turn categories yield exactly one prompt. Conversations yield one
    prompt per turn, where turn t embeds the generated answers of turns
    1..t-1 (so callers generate autoregressively, re-rendering as answers
    arrive).
    """
    if isinstance(questions, str):
        questions = [questions]
    if not questions:
        raise TemplateError("at least one question is required")

    if category is not Category.CONVERSATION:
        if len(questions) != 1:
            raise TemplateError(f"{category.value} takes exactly one question")
        template = _SINGLE_TURN_ANSWER_TEMPLATES[(category, modality)]
        bindings = _context_bindings(template, image, modality)
        if "question" in template.placeholders:
            bindings["question"] = questions[0]
        return [template.render(**bindings)]

    prior_answers = prior_answers or []
    if len(prior_answers) < len(questions) - 1:
        raise TemplateError(
            f"conversation with {len(questions)} turns needs {len(questions) - 1} prior answers, "
            f"got {len(prior_answers)}"
        )
    system_template = _CONVERSATION_SYSTEM_TEMPLATES[modality]
    system = system_template.render(**_context_bindings(system_template, image, modality))
    prompts = []
    for t, question in enumerate(questions):
        prior = "".join(
            f"Question: {questions[i]}\n\n===\n\nAnswer: {prior_answers[i]}\n\n===\n\n"
            for i in range(t)
        )
        scaffold = CONVERSATION_TURN_SCAFFOLD.render(prior_turns=prior, question=question)
        prompts.append(f"{system}\n\n{scaffold}")
    return prompts


def render_align_prompts(
    kind: str,
    original_question: str,
    original_answer: str,
    revised_question: str | None = None,
    revised_answer: str | None = None,
) -> str:
    """Rewrite or review prompt for the style-alignment step."""
    if not original_question or not original_answer:
        raise TemplateError("alignment prompts require a non-empty original question and answer")
    if kind == "rewrite":
        return ALIGN_REWRITE.render(
            original_question=original_question,
            original_answer=original_answer,
        )
    if kind == "review":
        if not revised_question or not revised_answer:
            raise TemplateError("review prompts require the revised question and answer")
        return ALIGN_REVIEW.render(
            original_question=original_question,
            original_answer=original_answer,
            revised_question=revised_question,
            revised_answer=revised_answer,
        )
    raise TemplateError(f"unknown alignment prompt kind {kind!r}")
