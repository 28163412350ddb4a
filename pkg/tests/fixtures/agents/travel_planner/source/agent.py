"""Travel planner agent: flights, hotels and day-by-day itineraries."""
from agents import Agent, function_tool


@function_tool
def search_flights(origin: str, destination: str, date: str) -> list[dict]:
    """Return flight offers between two cities."""
    ...


@function_tool
def search_hotels(city: str, max_price: float | None = None) -> list[dict]:
    """Return hotels in a city, optionally under a nightly price."""
    ...


@function_tool
def build_itinerary(city: str, days: int, interests: list[str]) -> str:
    """Compose a day-by-day plan."""
    ...


planner = Agent(
    name="travel_planner",
    instructions="Plan trips. Search flights and hotels before building an itinerary.",
    tools=[search_flights, search_hotels, build_itinerary],
)
