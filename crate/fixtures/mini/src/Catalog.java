/**
 * Product registry for the minimart sample shop.
 */
public class Catalog {
    private java.util.Map prices = new java.util.HashMap();
    private java.util.Map weights = new java.util.HashMap();

    /** Registers a product with its unit price and shipping weight. */
    public void addProduct(String sku, double price, double weight) {
        prices.put(sku, new Double(price));
        weights.put(sku, new Double(weight));
    }

    /** Unit price of a product; unknown SKUs must be rejected. */
    public double priceOf(String sku) {
        Object price = prices.get(sku);
        if (price == null) {
            return 0.0;
        }
        return ((Double) price).doubleValue();
    }

    /** Shipping weight of a product, zero when unknown. */
    public double weightOf(String sku) {
        Object weight = weights.get(sku);
        if (weight == null) {
            return 0.0;
        }
        return ((Double) weight).doubleValue();
    }

    public boolean contains(String sku) {
        return prices.containsKey(sku);
    }

    public int size() {
        return prices.size();
    }
}
